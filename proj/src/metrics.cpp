#include "v2lab/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace v2lab {

double compute_iou(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument("compute_iou: mask shapes differ");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool fa = a.data[i] != 0;
        const bool fb = b.data[i] != 0;
        inter += (fa && fb);
        uni += (fa || fb);
    }
    if (uni == 0) return 1.0;  // both empty: perfect agreement
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::pair<double, double> mask_centroid(const Mask& mask) {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
        }
    }
    if (n == 0) throw std::invalid_argument("mask_centroid: empty mask");
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

double localization_error(const Mask& pred, const Mask& truth) {
    if (pred.width != truth.width || pred.height != truth.height) {
        throw std::invalid_argument("localization_error: mask shapes differ");
    }
    if (truth.empty_foreground()) {
        throw std::invalid_argument("localization_error: empty ground-truth mask");
    }
    if (pred.empty_foreground()) return 1.0;
    const auto [px, py] = mask_centroid(pred);
    const auto [tx, ty] = mask_centroid(truth);
    const double diag = std::sqrt(static_cast<double>(pred.width) * pred.width +
                                  static_cast<double>(pred.height) * pred.height);
    return std::sqrt((px - tx) * (px - tx) + (py - ty) * (py - ty)) / diag;
}

MetricReport summarize_metrics(std::vector<MetricRow> rows) {
    MetricReport rep;
    rep.rows = std::move(rows);
    if (rep.rows.empty()) return rep;
    for (const auto& r : rep.rows) {
        rep.mean_iou += r.iou;
        rep.mean_loc_e += r.loc_e;
    }
    rep.mean_iou /= static_cast<double>(rep.rows.size());
    rep.mean_loc_e /= static_cast<double>(rep.rows.size());
    return rep;
}

void write_metric_csv(const MetricReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metric_csv: cannot open " + path);
    out << "id,iou,loc_e\n";
    char buf[64];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.iou, r.loc_e);
        out << r.id << "," << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", report.mean_iou, report.mean_loc_e);
    out << "mean," << buf << "\n";
    if (!out) throw std::runtime_error("write_metric_csv: write failed for " + path);
}

}  // namespace v2lab
