#pragma once

#include <cstdint>
#include <vector>

#include "v2lab/anchor.hpp"
#include "v2lab/decoder.hpp"
#include "v2lab/features.hpp"
#include "v2lab/geometry.hpp"
#include "v2lab/mask.hpp"

namespace v2lab {

/// Cyclic-consistency score of one candidate mask; mean_dist is +infinity
/// when the candidate projects to no foreground patch.
struct CyclicScore {
    int expert_id = 0;
    double mean_dist = 0.0;
    int n_points = 0;
};

struct ExpertPrediction {
    int expert_id = 0;
    Mask mask;
};

/// Correspondence pipeline with the views swapped: matches the candidate
/// target mask back onto the query view and returns the stratified matched
/// points in query-image pixels (the full set, no center collapse). A mask
/// with no foreground patch yields an empty set.
PointSet back_project(const FeatureGrid& feat_t, const FeatureGrid& feat_q, const Mask& pred_t,
                      const AnchorConfig& cfg);

/// Mean distance from each back-projected point to its nearest reference
/// point, where k_ref references are drawn uniformly (seeded, with
/// replacement) from the query mask's foreground pixels. Empty back_pts
/// score +infinity; an empty query mask is an error.
double cyclic_score(const PointSet& back_pts, const Mask& mq, int k_ref, std::uint64_t seed);

struct SelectionResult {
    int selected = 0;          // expert_id of the chosen candidate
    bool all_invalid = false;  // every candidate scored +infinity
    std::vector<CyclicScore> scores;
};

/// Point-level selector: scores every candidate against one shared reference
/// sample and picks the minimal mean distance, ties to the lowest expert_id.
/// All-invalid input falls back to the first candidate with a warning flag.
/// Non-parametric; nothing is updated.
SelectionResult select_expert(const std::vector<ExpertPrediction>& predictions,
                              const FeatureGrid& feat_t, const FeatureGrid& feat_q, const Mask& mq,
                              const AnchorConfig& cfg, int k_ref = 32, std::uint64_t seed = 0);

/// Mask-level baseline: back-projects each candidate into a query-view point
/// prompt, decodes a query-view mask with the given decoder, and picks the
/// best IoU against the query mask (ties to the lowest expert_id).
/// feat_q_dec carries the decoder-facing features of the query view.
SelectionResult cycle_mask_select(const std::vector<ExpertPrediction>& predictions,
                                  const FeatureGrid& feat_t, const FeatureGrid& feat_q,
                                  const FeatureGrid& feat_q_dec, const Mask& mq,
                                  DecoderParams& decoder, const AnchorConfig& cfg);

}  // namespace v2lab
