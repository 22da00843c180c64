#include "v2lab/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace v2lab {

namespace {

void check_mask_shape(std::size_t n_logits, const Mask& gt, const char* op) {
    const std::size_t n_mask =
        static_cast<std::size_t>(gt.width) * static_cast<std::size_t>(gt.height);
    if (n_logits != n_mask) {
        throw std::invalid_argument(std::string(op) + ": prediction has " +
                                    std::to_string(n_logits) + " values but mask has " +
                                    std::to_string(n_mask) + " pixels");
    }
    if (n_mask == 0) throw std::invalid_argument(std::string(op) + ": empty mask");
}

std::vector<double> mask_as_doubles(const Mask& gt) {
    std::vector<double> t(gt.data.size());
    for (std::size_t i = 0; i < gt.data.size(); ++i) t[i] = gt.data[i] ? 1.0 : 0.0;
    return t;
}

// Unit-normalized copies of a batch of equal-length vectors.
std::vector<std::vector<double>> normalize_batch(
    const std::vector<std::vector<double>>& batch, const char* side) {
    std::vector<std::vector<double>> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double sq = 0.0;
        for (double v : batch[i]) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0)) {
            throw std::invalid_argument("contrastive_loss: zero-norm " + std::string(side) +
                                        " vector at batch index " + std::to_string(i));
        }
        out[i].resize(batch[i].size());
        for (std::size_t d = 0; d < batch[i].size(); ++d) out[i][d] = batch[i][d] / norm;
    }
    return out;
}

double logsumexp(const std::vector<double>& xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0)) throw std::invalid_argument("loss weights: lambda1 must be >= 0");
    if (!(lambda2 >= 0.0)) throw std::invalid_argument("loss weights: lambda2 must be >= 0");
    if (!(lambda3 >= 0.0)) throw std::invalid_argument("loss weights: lambda3 must be >= 0");
    if (!(temperature > 0.0))
        throw std::invalid_argument("loss weights: temperature must be > 0");
    if (warmup_contrastive_steps < 0)
        throw std::invalid_argument("loss weights: warmup_contrastive_steps must be >= 0");
    if (!(warmup_lambda1 >= 0.0))
        throw std::invalid_argument("loss weights: warmup_lambda1 must be >= 0");
    if (!(ce_weight >= 0.0)) throw std::invalid_argument("loss weights: ce_weight must be >= 0");
    if (!(dice_weight >= 0.0))
        throw std::invalid_argument("loss weights: dice_weight must be >= 0");
}

double effective_lambda1(const LossWeights& w, std::int64_t step) {
    return step < w.warmup_contrastive_steps ? w.warmup_lambda1 : w.lambda1;
}

double contrastive_loss(const std::vector<std::vector<double>>& vc_batch,
                        const std::vector<std::vector<double>>& vt_batch,
                        double temperature) {
    if (vc_batch.empty()) throw std::invalid_argument("contrastive_loss: empty batch");
    if (vc_batch.size() != vt_batch.size())
        throw std::invalid_argument("contrastive_loss: batch size mismatch");
    if (!(temperature > 0.0))
        throw std::invalid_argument("contrastive_loss: temperature must be > 0");
    const std::size_t n = vc_batch.size();
    const std::size_t dim = vc_batch[0].size();
    for (std::size_t i = 0; i < n; ++i) {
        if (vc_batch[i].size() != dim || vt_batch[i].size() != dim)
            throw std::invalid_argument("contrastive_loss: inconsistent vector length");
    }

    const auto uc = normalize_batch(vc_batch, "query");
    const auto ut = normalize_batch(vt_batch, "target");

    // S_ik = cos(vc_i, vt_k) / temperature
    std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            double dot = 0.0;
            for (std::size_t d = 0; d < dim; ++d) dot += uc[i][d] * ut[k][d];
            s[i][k] = dot / temperature;
        }
    }

    double row_dir = 0.0;  // anchored at vc_i, candidates vt_k
    double col_dir = 0.0;  // anchored at vt_i, candidates vc_k
    for (std::size_t i = 0; i < n; ++i) {
        row_dir += logsumexp(s[i]) - s[i][i];
        std::vector<double> col(n);
        for (std::size_t k = 0; k < n; ++k) col[k] = s[k][i];
        col_dir += logsumexp(col) - s[i][i];
    }
    return row_dir / static_cast<double>(n) + col_dir / static_cast<double>(n);
}

nn::Var contrastive_loss_graph(const std::vector<nn::Var>& vc_batch,
                               const std::vector<nn::Var>& vt_batch,
                               double temperature) {
    if (vc_batch.empty()) throw std::invalid_argument("contrastive_loss: empty batch");
    if (vc_batch.size() != vt_batch.size())
        throw std::invalid_argument("contrastive_loss: batch size mismatch");
    if (!(temperature > 0.0))
        throw std::invalid_argument("contrastive_loss: temperature must be > 0");
    const int dim = static_cast<int>(vc_batch[0].numel());

    auto stack = [dim](const std::vector<nn::Var>& batch, const char* side) {
        std::vector<nn::Var> rows;
        rows.reserve(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (!batch[i].defined())
                throw std::invalid_argument("contrastive_loss: undefined " + std::string(side) +
                                            " vector at batch index " + std::to_string(i));
            if (batch[i].numel() != dim)
                throw std::invalid_argument("contrastive_loss: inconsistent vector length");
            rows.push_back(nn::reshape(batch[i], {1, dim}));
        }
        return nn::concat_rows(rows);
    };

    nn::Var u = stack(vc_batch, "query");
    nn::Var v = stack(vt_batch, "target");

    nn::Var u_norm = nn::sqrt_(nn::row_sum(nn::mul(u, u)));
    nn::Var v_norm = nn::sqrt_(nn::row_sum(nn::mul(v, v)));
    for (std::size_t i = 0; i < u_norm.value().size(); ++i) {
        if (!(u_norm.value()[i] > 0.0))
            throw std::invalid_argument("contrastive_loss: zero-norm query vector at batch index " +
                                        std::to_string(i));
        if (!(v_norm.value()[i] > 0.0))
            throw std::invalid_argument(
                "contrastive_loss: zero-norm target vector at batch index " + std::to_string(i));
    }

    nn::Var a = nn::mul_scalar(nn::matmul_t(nn::div_rows(u, u_norm), nn::div_rows(v, v_norm)),
                               1.0 / temperature);
    nn::Var pos = nn::diag2d(a);
    nn::Var row_dir = nn::mean(nn::sub(nn::logsumexp_rows(a), pos));
    nn::Var col_dir = nn::mean(nn::sub(nn::logsumexp_rows(nn::transpose2d(a)), pos));
    return nn::add(row_dir, col_dir);
}

double ce_loss(const std::vector<double>& logits, const Mask& gt) {
    check_mask_shape(logits.size(), gt, "ce_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        const double y = gt.data[i] ? 1.0 : 0.0;
        // max(z,0) - z*y + log1p(exp(-|z|)) is the stable form of the
        // binary cross-entropy of sigmoid(z).
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    return acc / static_cast<double>(logits.size());
}

nn::Var ce_loss_graph(const nn::Var& logits, const Mask& gt) {
    check_mask_shape(static_cast<std::size_t>(logits.numel()), gt, "ce_loss");
    return nn::bce_with_logits_mean(logits, mask_as_doubles(gt));
}

double dice_loss(const std::vector<double>& logits, const Mask& gt) {
    check_mask_shape(logits.size(), gt, "dice_loss");
    const double smooth = 1.0;
    double inter = 0.0, p_sum = 0.0, g_sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits[i]));
        const double y = gt.data[i] ? 1.0 : 0.0;
        inter += p * y;
        p_sum += p;
        g_sum += y;
    }
    return 1.0 - (2.0 * inter + smooth) / (p_sum + g_sum + smooth);
}

nn::Var dice_loss_graph(const nn::Var& logits, const Mask& gt) {
    check_mask_shape(static_cast<std::size_t>(logits.numel()), gt, "dice_loss");
    nn::Var p = nn::sigmoid(logits);
    nn::Var g = nn::Var::constant(logits.shape(), mask_as_doubles(gt));
    nn::Var inter = nn::sum(nn::mul(p, g));
    nn::Var numer = nn::add_scalar(nn::mul_scalar(inter, 2.0), 1.0);
    nn::Var denom = nn::add_scalar(nn::add(nn::sum(p), nn::sum(g)), 1.0);
    return nn::sub(nn::Var::scalar(1.0), nn::divide(numer, denom));
}

double mask_loss(const std::vector<double>& logits, const Mask& gt, double ce_weight,
                 double dice_weight) {
    return ce_weight * ce_loss(logits, gt) + dice_weight * dice_loss(logits, gt);
}

nn::Var mask_loss_graph(const nn::Var& logits, const Mask& gt, double ce_weight,
                        double dice_weight) {
    return nn::add(nn::mul_scalar(ce_loss_graph(logits, gt), ce_weight),
                   nn::mul_scalar(dice_loss_graph(logits, gt), dice_weight));
}

LossComponents total_loss(double contrastive, double structural, double mask_term,
                          const LossWeights& w, std::int64_t step) {
    w.validate();
    LossComponents c;
    c.contrastive = contrastive;
    c.structural = structural;
    c.mask = mask_term;
    c.lambda1_effective = effective_lambda1(w, step);
    c.total = c.lambda1_effective * contrastive + w.lambda2 * structural + w.lambda3 * mask_term;
    return c;
}

nn::Var total_loss_graph(const nn::Var& contrastive, const nn::Var& structural,
                         const nn::Var& mask_term, const LossWeights& w, std::int64_t step) {
    w.validate();
    const double l1 = effective_lambda1(w, step);
    return nn::add(nn::add(nn::mul_scalar(contrastive, l1), nn::mul_scalar(structural, w.lambda2)),
                   nn::mul_scalar(mask_term, w.lambda3));
}

}  // namespace v2lab
