#include "v2lab/pccs.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "v2lab/metrics.hpp"

namespace v2lab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> foreground_pixels(const Mask& m) {
    std::vector<int> px;
    for (int i = 0; i < m.width * m.height; ++i) {
        if (m.data[static_cast<std::size_t>(i)]) px.push_back(i);
    }
    return px;
}

/// Shared argmin walk: lower score wins, ties go to the lower expert_id.
SelectionResult pick_minimum(std::vector<CyclicScore> scores, int first_expert_id) {
    SelectionResult r;
    r.scores = std::move(scores);
    bool any = false;
    double best = kInf;
    int best_id = 0;
    for (const CyclicScore& sc : r.scores) {
        if (!std::isfinite(sc.mean_dist)) continue;
        if (!any || sc.mean_dist < best || (sc.mean_dist == best && sc.expert_id < best_id)) {
            any = true;
            best = sc.mean_dist;
            best_id = sc.expert_id;
        }
    }
    if (!any) {
        r.selected = first_expert_id;
        r.all_invalid = true;
    } else {
        r.selected = best_id;
    }
    return r;
}

}  // namespace

PointSet back_project(const FeatureGrid& feat_t, const FeatureGrid& feat_q, const Mask& pred_t,
                      const AnchorConfig& cfg) {
    cfg.validate();
    const std::vector<int> fg = project_mask_to_grid(pred_t, feat_t, cfg.foreground_threshold);
    if (fg.empty()) return {};
    const Heatmap h = similarity_heatmap(feat_t, feat_q);
    const MatchSet matches = best_matches(h, fg);

    PointSet pts;
    std::vector<double> scores;
    pts.reserve(matches.size());
    scores.reserve(matches.size());
    for (const Match& m : matches) {
        pts.push_back(Point2D{static_cast<double>(m.target_index % feat_q.cols),
                              static_cast<double>(m.target_index / feat_q.cols),
                              Frame::PatchGrid});
        scores.push_back(m.score);
    }
    PointSet kept = stratify_points(pts, scores, cfg.min_dist);
    return to_canonical_coords(kept, feat_q);
}

double cyclic_score(const PointSet& back_pts, const Mask& mq, int k_ref, std::uint64_t seed) {
    if (k_ref < 1) throw std::invalid_argument("cyclic_score: k_ref must be >= 1");
    const std::vector<int> fg = foreground_pixels(mq);
    if (fg.empty()) throw std::invalid_argument("cyclic_score: query mask has no foreground");
    if (back_pts.empty()) return kInf;

    Rng rng(seed);
    std::vector<double> rx(static_cast<std::size_t>(k_ref));
    std::vector<double> ry(static_cast<std::size_t>(k_ref));
    for (int k = 0; k < k_ref; ++k) {
        const int pick = static_cast<int>(
            rng.uniform_int(0, static_cast<std::int64_t>(fg.size()) - 1));
        const int px = fg[static_cast<std::size_t>(pick)];
        rx[static_cast<std::size_t>(k)] = px % mq.width + 0.5;
        ry[static_cast<std::size_t>(k)] = px / mq.width + 0.5;
    }

    double acc = 0.0;
    for (const Point2D& p : back_pts) {
        double best = kInf;
        for (int k = 0; k < k_ref; ++k) {
            const double dx = p.x - rx[static_cast<std::size_t>(k)];
            const double dy = p.y - ry[static_cast<std::size_t>(k)];
            best = std::min(best, dx * dx + dy * dy);
        }
        acc += std::sqrt(best);
    }
    return acc / static_cast<double>(back_pts.size());
}

SelectionResult select_expert(const std::vector<ExpertPrediction>& predictions,
                              const FeatureGrid& feat_t, const FeatureGrid& feat_q, const Mask& mq,
                              const AnchorConfig& cfg, int k_ref, std::uint64_t seed) {
    if (predictions.empty()) throw std::invalid_argument("select_expert: no candidates");
    cfg.validate();
    std::vector<CyclicScore> scores;
    scores.reserve(predictions.size());
    for (const ExpertPrediction& p : predictions) {
        const PointSet pts = back_project(feat_t, feat_q, p.mask, cfg);
        CyclicScore sc;
        sc.expert_id = p.expert_id;
        sc.n_points = static_cast<int>(pts.size());
        // one shared seeded reference sample keeps scores comparable and the
        // selection invariant under candidate permutation
        sc.mean_dist = pts.empty() ? kInf : cyclic_score(pts, mq, k_ref, seed);
        scores.push_back(sc);
    }
    return pick_minimum(std::move(scores), predictions.front().expert_id);
}

SelectionResult cycle_mask_select(const std::vector<ExpertPrediction>& predictions,
                                  const FeatureGrid& feat_t, const FeatureGrid& feat_q,
                                  const FeatureGrid& feat_q_dec, const Mask& mq,
                                  DecoderParams& decoder, const AnchorConfig& cfg) {
    if (predictions.empty()) throw std::invalid_argument("cycle_mask_select: no candidates");
    cfg.validate();
    std::vector<CyclicScore> scores;
    scores.reserve(predictions.size());
    for (const ExpertPrediction& p : predictions) {
        CyclicScore sc;
        sc.expert_id = p.expert_id;
        sc.mean_dist = kInf;
        const std::vector<int> fg =
            project_mask_to_grid(p.mask, feat_t, cfg.foreground_threshold);
        if (!fg.empty()) {
            // swapped-role prompt: candidate mask back onto the query view
            const AnchorPrompt ap = generate_anchor_prompt(feat_t, feat_q, p.mask, cfg);
            sc.n_points = static_cast<int>(ap.points.size());
            const PromptEmbedding prompt = encode_point_prompt(
                ap, feat_q_dec.orig_width, feat_q_dec.orig_height, decoder.cfg.dim);
            const Mask recon = decode_mask(feat_q_dec, prompt, decoder).threshold(0.5);
            // distance form of the overlap so the shared argmin applies
            sc.mean_dist = 1.0 - compute_iou(recon, mq);
        }
        scores.push_back(sc);
    }
    return pick_minimum(std::move(scores), predictions.front().expert_id);
}

}  // namespace v2lab
