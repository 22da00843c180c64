#pragma once

#include <cstdint>
#include <vector>

#include "v2lab/mask.hpp"
#include "v2lab/nn.hpp"

namespace v2lab {

/// Coefficients of the combined training objective plus the mask-loss mix.
/// lambda1 is swapped for warmup_lambda1 during the first
/// warmup_contrastive_steps optimizer steps to strengthen the region-feature
/// term early in training.
struct LossWeights {
    double lambda1 = 1.0;     // region-feature contrastive term
    double lambda2 = 1.0;     // query-view structural reconstruction term
    double lambda3 = 10.0;    // target-view mask term
    double temperature = 0.07;
    std::int64_t warmup_contrastive_steps = 4000;
    double warmup_lambda1 = 100.0;
    double ce_weight = 1.0;    // cross-entropy share inside mask_loss
    double dice_weight = 1.0;  // dice share inside mask_loss

    void validate() const;  // throws std::invalid_argument naming the field
};

/// Per-term values of one total_loss evaluation, for logging.
struct LossComponents {
    double total = 0.0;
    double contrastive = 0.0;
    double structural = 0.0;
    double mask = 0.0;
    double lambda1_effective = 0.0;
};

/// warmup_lambda1 while step < warmup_contrastive_steps, lambda1 afterwards.
double effective_lambda1(const LossWeights& w, std::int64_t step);

/// Symmetric in-batch InfoNCE over cosine similarities: with S_ik =
/// cos(vc_i, vt_k)/temperature, the loss is the mean over i of
/// (logsumexp_k S_ik - S_ii) plus the mean over i of the column-anchored
/// counterpart (logsumexp_k S_ki - S_ii). A batch of one yields exactly 0.
/// Zero-norm vectors are rejected.
double contrastive_loss(const std::vector<std::vector<double>>& vc_batch,
                        const std::vector<std::vector<double>>& vt_batch,
                        double temperature);
nn::Var contrastive_loss_graph(const std::vector<nn::Var>& vc_batch,
                               const std::vector<nn::Var>& vt_batch,
                               double temperature);

/// Mean binary cross-entropy of sigmoid(logits) against a 0/1 mask.
double ce_loss(const std::vector<double>& logits, const Mask& gt);
nn::Var ce_loss_graph(const nn::Var& logits, const Mask& gt);

/// Smoothed soft dice on probabilities: 1 - (2*|P.G| + 1) / (|P| + |G| + 1).
double dice_loss(const std::vector<double>& logits, const Mask& gt);
nn::Var dice_loss_graph(const nn::Var& logits, const Mask& gt);

/// ce_weight * ce + dice_weight * dice on the same prediction/target pair.
double mask_loss(const std::vector<double>& logits, const Mask& gt,
                 double ce_weight = 1.0, double dice_weight = 1.0);
nn::Var mask_loss_graph(const nn::Var& logits, const Mask& gt,
                        double ce_weight = 1.0, double dice_weight = 1.0);

/// Weighted combination of the three training terms; lambda1 is subject to
/// the warmup substitution. The plain form also reports the per-term values.
LossComponents total_loss(double contrastive, double structural, double mask_term,
                          const LossWeights& w, std::int64_t step);
nn::Var total_loss_graph(const nn::Var& contrastive, const nn::Var& structural,
                         const nn::Var& mask_term, const LossWeights& w,
                         std::int64_t step);

}  // namespace v2lab
