#pragma once

#include <vector>

#include "v2lab/features.hpp"
#include "v2lab/geometry.hpp"
#include "v2lab/mask.hpp"

namespace v2lab {

/// Cosine-similarity matrix between query patches (rows) and target patches
/// (columns), flattened row-major in both directions.
struct Heatmap {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

struct Match {
    int query_index = 0;
    int target_index = 0;
    double score = 0.0;
};
using MatchSet = std::vector<Match>;

struct AnchorConfig {
    double min_dist = 2.0;             // stratification radius, patch-grid units
    int n_points = 1;                  // emitted anchor points
    double outlier_mad_k = 3.0;        // median +- k*MAD filter
    double foreground_threshold = 0.5; // patch foreground fraction

    void validate() const;
};

/// Geometry-based prompt: point coordinates in the canonical frame plus a
/// foreground flag per point.
struct AnchorPrompt {
    PointSet points;
    std::vector<int> labels;
};

/// H_ij = cos(fq_i, ft_j). Throws on dim mismatch or a zero-norm descriptor
/// (the error names the offending patch).
Heatmap similarity_heatmap(const FeatureGrid& fq, const FeatureGrid& ft);

/// For each foreground query patch: its argmax target patch, ties broken by
/// the smallest target index. Scores are retained.
MatchSet best_matches(const Heatmap& h, const std::vector<int>& foreground);

/// Greedy scan in descending score order: keep a point iff it is strictly
/// farther than min_dist from every point already kept.
PointSet stratify_points(const PointSet& pts, const std::vector<double>& scores, double min_dist);

/// Per-axis median +- mad_k*MAD outlier filter, then centroid of survivors.
/// If the filter removes everything, falls back to the per-axis median point.
Point2D robust_center(const PointSet& pts, double mad_k);

/// Patch-grid point (col x, row y) -> canonical pixel center
/// ((x+0.5)*patch_size*canon_w/orig_width, likewise for y). Canonical size
/// defaults to the original image size.
PointSet to_canonical_coords(const PointSet& pts, const FeatureGrid& grid, int canon_w = -1,
                             int canon_h = -1);

/// Full pipeline: foreground projection -> heatmap -> argmax matching ->
/// stratification -> (n_points=1 ? robust center : top-n points) ->
/// canonical coordinates. Entirely non-learnable.
AnchorPrompt generate_anchor_prompt(const FeatureGrid& fq, const FeatureGrid& ft, const Mask& mq,
                                    const AnchorConfig& cfg);

}  // namespace v2lab
