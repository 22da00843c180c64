#pragma once

#include <string>
#include <utility>
#include <vector>

#include "v2lab/mask.hpp"

namespace v2lab {

/// Intersection over union. Two empty masks are a perfect match (1.0).
double compute_iou(const Mask& a, const Mask& b);

/// Foreground centroid (pixel-index coordinates). Throws on an empty mask.
std::pair<double, double> mask_centroid(const Mask& mask);

/// Centroid distance between prediction and ground truth, normalized by the
/// image diagonal. An empty prediction scores the maximum error 1.0.
double localization_error(const Mask& pred, const Mask& truth);

struct MetricRow {
    std::string id;
    double iou = 0.0;
    double loc_e = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    double mean_iou = 0.0;
    double mean_loc_e = 0.0;
};

MetricReport summarize_metrics(std::vector<MetricRow> rows);

/// Writes `id,iou,loc_e` with a header row; values printed with 6 decimals.
void write_metric_csv(const MetricReport& report, const std::string& path);

}  // namespace v2lab
