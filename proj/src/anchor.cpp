#include "v2lab/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "v2lab/runtime.hpp"

namespace v2lab {
namespace {

double axis_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void AnchorConfig::validate() const {
    if (min_dist < 0.0) throw std::invalid_argument("AnchorConfig: min_dist must be >= 0");
    if (n_points < 1) throw std::invalid_argument("AnchorConfig: n_points must be >= 1");
    if (outlier_mad_k < 0.0) throw std::invalid_argument("AnchorConfig: outlier_mad_k must be >= 0");
    if (foreground_threshold < 0.0 || foreground_threshold > 1.0) {
        throw std::invalid_argument("AnchorConfig: foreground_threshold must be in [0, 1]");
    }
}

Heatmap similarity_heatmap(const FeatureGrid& fq, const FeatureGrid& ft) {
    if (fq.dim != ft.dim) throw std::invalid_argument("similarity_heatmap: descriptor dims differ");
    const int nq = fq.num_patches();
    const int nt = ft.num_patches();

    auto norms_of = [](const FeatureGrid& g, const char* side) {
        std::vector<double> norms(static_cast<std::size_t>(g.num_patches()));
        for (int i = 0; i < g.num_patches(); ++i) {
            double s = 0.0;
            const int r = i / g.cols, c = i % g.cols;
            for (int f = 0; f < g.dim; ++f) {
                const double v = g.value(f, r, c);
                s += v * v;
            }
            if (s < 1e-24) {
                throw std::invalid_argument(std::string("similarity_heatmap: zero-norm ") + side +
                                            " patch " + std::to_string(i));
            }
            norms[static_cast<std::size_t>(i)] = std::sqrt(s);
        }
        return norms;
    };
    const std::vector<double> qn = norms_of(fq, "query");
    const std::vector<double> tn = norms_of(ft, "target");

    Heatmap h;
    h.rows = nq;
    h.cols = nt;
    h.data.assign(static_cast<std::size_t>(nq) * nt, 0.0);
    parallel_chunks(nq, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const int qr = i / fq.cols, qc = i % fq.cols;
            for (int j = 0; j < nt; ++j) {
                const int tr = j / ft.cols, tc = j % ft.cols;
                double dot = 0.0;
                for (int f = 0; f < fq.dim; ++f) {
                    dot += static_cast<double>(fq.value(f, qr, qc)) * ft.value(f, tr, tc);
                }
                double v = dot / (qn[static_cast<std::size_t>(i)] * tn[static_cast<std::size_t>(j)]);
                v = std::clamp(v, -1.0, 1.0);  // guard rounding past the cosine bounds
                h.data[static_cast<std::size_t>(i) * nt + j] = v;
            }
        }
    });
    return h;
}

MatchSet best_matches(const Heatmap& h, const std::vector<int>& foreground) {
    if (foreground.empty()) throw std::invalid_argument("best_matches: empty foreground set");
    MatchSet out;
    out.reserve(foreground.size());
    for (int i : foreground) {
        if (i < 0 || i >= h.rows) {
            throw std::invalid_argument("best_matches: foreground index out of range: " +
                                        std::to_string(i));
        }
        int best_j = 0;
        double best = h.at(i, 0);
        for (int j = 1; j < h.cols; ++j) {
            const double v = h.at(i, j);
            if (v > best) {  // strict: ties keep the smallest index
                best = v;
                best_j = j;
            }
        }
        out.push_back(Match{i, best_j, best});
    }
    return out;
}

PointSet stratify_points(const PointSet& pts, const std::vector<double>& scores, double min_dist) {
    if (pts.empty()) throw std::invalid_argument("stratify_points: empty point set");
    if (scores.size() != pts.size()) {
        throw std::invalid_argument("stratify_points: scores size does not match points");
    }
    std::vector<std::size_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    PointSet kept;
    for (std::size_t idx : order) {
        const Point2D& p = pts[idx];
        bool ok = true;
        for (const Point2D& q : kept) {
            const double dx = p.x - q.x, dy = p.y - q.y;
            if (std::sqrt(dx * dx + dy * dy) <= min_dist) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(p);
    }
    return kept;
}

Point2D robust_center(const PointSet& pts, double mad_k) {
    if (pts.empty()) throw std::invalid_argument("robust_center: empty point set");
    std::vector<double> xs, ys;
    xs.reserve(pts.size());
    ys.reserve(pts.size());
    for (const Point2D& p : pts) {
        xs.push_back(p.x);
        ys.push_back(p.y);
    }
    const double mx = axis_median(xs);
    const double my = axis_median(ys);

    std::vector<double> dx, dy;
    dx.reserve(pts.size());
    dy.reserve(pts.size());
    for (const Point2D& p : pts) {
        dx.push_back(std::abs(p.x - mx));
        dy.push_back(std::abs(p.y - my));
    }
    const double mad_x = axis_median(dx);
    const double mad_y = axis_median(dy);

    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (const Point2D& p : pts) {
        // MAD = 0 degenerates to an exact-match filter on that axis.
        if (std::abs(p.x - mx) > mad_k * mad_x) continue;
        if (std::abs(p.y - my) > mad_k * mad_y) continue;
        sx += p.x;
        sy += p.y;
        ++n;
    }
    if (n == 0) return Point2D{mx, my, pts.front().frame};
    return Point2D{sx / static_cast<double>(n), sy / static_cast<double>(n), pts.front().frame};
}

PointSet to_canonical_coords(const PointSet& pts, const FeatureGrid& grid, int canon_w,
                             int canon_h) {
    const int cw = canon_w > 0 ? canon_w : grid.orig_width;
    const int ch = canon_h > 0 ? canon_h : grid.orig_height;
    const double sx = static_cast<double>(cw) / grid.orig_width;
    const double sy = static_cast<double>(ch) / grid.orig_height;
    PointSet out;
    out.reserve(pts.size());
    for (const Point2D& p : pts) {
        if (p.x < -0.5 || p.x > grid.cols - 0.5 || p.y < -0.5 || p.y > grid.rows - 0.5) {
            throw std::invalid_argument("to_canonical_coords: patch coordinate out of grid bounds");
        }
        out.push_back(Point2D{(p.x + 0.5) * grid.patch_size * sx, (p.y + 0.5) * grid.patch_size * sy,
                              Frame::Canonical});
    }
    return out;
}

AnchorPrompt generate_anchor_prompt(const FeatureGrid& fq, const FeatureGrid& ft, const Mask& mq,
                                    const AnchorConfig& cfg) {
    cfg.validate();
    const std::vector<int> fg = project_mask_to_grid(mq, fq, cfg.foreground_threshold);
    if (fg.empty()) {
        throw std::invalid_argument("generate_anchor_prompt: mask projects to no foreground patch");
    }
    const Heatmap h = similarity_heatmap(fq, ft);
    const MatchSet matches = best_matches(h, fg);

    PointSet target_pts;
    std::vector<double> scores;
    target_pts.reserve(matches.size());
    scores.reserve(matches.size());
    for (const Match& m : matches) {
        target_pts.push_back(Point2D{static_cast<double>(m.target_index % ft.cols),
                                     static_cast<double>(m.target_index / ft.cols),
                                     Frame::PatchGrid});
        scores.push_back(m.score);
    }

    PointSet kept = stratify_points(target_pts, scores, cfg.min_dist);
    PointSet chosen;
    if (cfg.n_points == 1) {
        chosen.push_back(robust_center(kept, cfg.outlier_mad_k));
    } else {
        const std::size_t n = std::min(kept.size(), static_cast<std::size_t>(cfg.n_points));
        chosen.assign(kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(n));
    }

    AnchorPrompt prompt;
    prompt.points = to_canonical_coords(chosen, ft);
    prompt.labels.assign(prompt.points.size(), 1);
    return prompt;
}

}  // namespace v2lab
