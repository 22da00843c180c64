#include "v2lab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "v2lab/metrics.hpp"

namespace v2lab {

namespace {

constexpr std::uint64_t kSaltPretrain = 0x70726574726e00ull;
constexpr std::uint64_t kSaltVisual = 0x76697375616c00ull;
constexpr std::uint64_t kSaltFusion = 0x667573696f6e00ull;

void fisher_yates(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

std::int64_t planned_steps(std::size_t n_samples, const TrainConfig& cfg) {
    const std::int64_t consume =
        static_cast<std::int64_t>(cfg.batch_size) * static_cast<std::int64_t>(cfg.grad_accum);
    const std::int64_t spe = static_cast<std::int64_t>(n_samples) / consume;
    if (spe == 0) {
        throw std::invalid_argument("train: dataset smaller than one optimizer batch (" +
                                    std::to_string(n_samples) + " samples, batch " +
                                    std::to_string(consume) + ")");
    }
    std::int64_t total = spe * cfg.epochs;
    if (cfg.max_steps > 0) total = std::min<std::int64_t>(total, cfg.max_steps);
    return total;
}

/// Deterministic in-object point: foreground pixel nearest the centroid,
/// reported at its pixel center.
Point2D deterministic_object_point(const Mask& m) {
    const auto [cx, cy] = mask_centroid(m);
    double best = 0.0;
    int bx = -1, by = -1;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (bx < 0 || d < best) {
                best = d;
                bx = x;
                by = y;
            }
        }
    }
    if (bx < 0) throw std::invalid_argument("deterministic_object_point: empty mask");
    return Point2D{bx + 0.5, by + 0.5, Frame::Canonical};
}

std::vector<int> foreground_pixels(const Mask& m) {
    std::vector<int> px;
    for (int i = 0; i < m.width * m.height; ++i) {
        if (m.data[static_cast<std::size_t>(i)]) px.push_back(i);
    }
    return px;
}

AnchorPrompt single_point_prompt(const Point2D& p) {
    AnchorPrompt ap;
    ap.points.push_back(p);
    ap.labels.push_back(1);
    return ap;
}

}  // namespace

std::string to_string(ExpertKind k) {
    switch (k) {
        case ExpertKind::Anchor: return "anchor";
        case ExpertKind::Visual: return "visual";
        case ExpertKind::Fusion: return "fusion";
    }
    throw std::invalid_argument("to_string: bad expert kind");
}

ExpertKind expert_kind_from_string(const std::string& s) {
    if (s == "anchor") return ExpertKind::Anchor;
    if (s == "visual") return ExpertKind::Visual;
    if (s == "fusion") return ExpertKind::Fusion;
    throw std::invalid_argument("unknown expert kind '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0))
        throw std::invalid_argument("train config: beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train config: beta2 must be in [0, 1)");
    if (!(weight_decay >= 0.0))
        throw std::invalid_argument("train config: weight_decay must be >= 0");
    if (!(grad_clip_norm > 0.0))
        throw std::invalid_argument("train config: grad_clip_norm must be > 0");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (grad_accum < 1) throw std::invalid_argument("train config: grad_accum must be >= 1");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
        throw std::invalid_argument("train config: warmup_ratio must be in [0, 1)");
    if (max_steps < 0) throw std::invalid_argument("train config: max_steps must be >= 0");
    loss.validate();
    anchor.validate();
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
    TrainConfig cfg;
    cfg.lr = kv.get_double("lr", cfg.lr);
    cfg.beta1 = kv.get_double("beta1", cfg.beta1);
    cfg.beta2 = kv.get_double("beta2", cfg.beta2);
    cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
    cfg.grad_clip_norm = kv.get_double("grad_clip_norm", cfg.grad_clip_norm);
    cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
    cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
    cfg.grad_accum = static_cast<int>(kv.get_int("grad_accum", cfg.grad_accum));
    cfg.warmup_ratio = kv.get_double("warmup_ratio", cfg.warmup_ratio);
    cfg.max_steps = static_cast<int>(kv.get_int("max_steps", cfg.max_steps));
    cfg.loss.lambda1 = kv.get_double("lambda1", cfg.loss.lambda1);
    cfg.loss.lambda2 = kv.get_double("lambda2", cfg.loss.lambda2);
    cfg.loss.lambda3 = kv.get_double("lambda3", cfg.loss.lambda3);
    cfg.loss.temperature = kv.get_double("temperature", cfg.loss.temperature);
    cfg.loss.warmup_contrastive_steps =
        kv.get_int("warmup_contrastive_steps", cfg.loss.warmup_contrastive_steps);
    cfg.loss.warmup_lambda1 = kv.get_double("warmup_lambda1", cfg.loss.warmup_lambda1);
    cfg.loss.ce_weight = kv.get_double("ce_weight", cfg.loss.ce_weight);
    cfg.loss.dice_weight = kv.get_double("dice_weight", cfg.loss.dice_weight);
    cfg.anchor.min_dist = kv.get_double("anchor_min_dist", cfg.anchor.min_dist);
    cfg.anchor.n_points = static_cast<int>(kv.get_int("anchor_n_points", cfg.anchor.n_points));
    cfg.anchor.outlier_mad_k = kv.get_double("anchor_outlier_mad_k", cfg.anchor.outlier_mad_k);
    cfg.anchor.foreground_threshold =
        kv.get_double("anchor_foreground_threshold", cfg.anchor.foreground_threshold);
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

KeyValueConfig TrainConfig::to_config() const {
    KeyValueConfig kv;
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        kv.set(key, buf);
    };
    put("lr", lr);
    put("beta1", beta1);
    put("beta2", beta2);
    put("weight_decay", weight_decay);
    put("grad_clip_norm", grad_clip_norm);
    kv.set("epochs", std::to_string(epochs));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("grad_accum", std::to_string(grad_accum));
    put("warmup_ratio", warmup_ratio);
    kv.set("max_steps", std::to_string(max_steps));
    put("lambda1", loss.lambda1);
    put("lambda2", loss.lambda2);
    put("lambda3", loss.lambda3);
    put("temperature", loss.temperature);
    kv.set("warmup_contrastive_steps", std::to_string(loss.warmup_contrastive_steps));
    put("warmup_lambda1", loss.warmup_lambda1);
    put("ce_weight", loss.ce_weight);
    put("dice_weight", loss.dice_weight);
    put("anchor_min_dist", anchor.min_dist);
    kv.set("anchor_n_points", std::to_string(anchor.n_points));
    put("anchor_outlier_mad_k", anchor.outlier_mad_k);
    put("anchor_foreground_threshold", anchor.foreground_threshold);
    kv.set("seed", std::to_string(seed));
    return kv;
}

double lr_at_step(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps <= 0) throw std::invalid_argument("lr_at_step: total_steps must be > 0");
    if (step < 0) throw std::invalid_argument("lr_at_step: step must be >= 0");
    if (step >= total_steps) return 0.0;
    const double s = static_cast<double>(step);
    const double warm = cfg.warmup_ratio * static_cast<double>(total_steps);
    if (s < warm) return cfg.lr * s / warm;
    const double progress = (s - warm) / (static_cast<double>(total_steps) - warm);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

AdamW::AdamW(std::vector<nn::Var> params, double beta1, double beta2, double weight_decay,
             double eps)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
    slots_.reserve(params.size());
    for (nn::Var& p : params) {
        if (!p.defined()) throw std::invalid_argument("optimizer: undefined parameter");
        Slot s;
        s.p = p;
        s.m.assign(static_cast<std::size_t>(p.numel()), 0.0);
        s.v.assign(static_cast<std::size_t>(p.numel()), 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamW::zero_grad() {
    for (Slot& s : slots_) s.p.drop_grad();
}

void AdamW::scale_grads(double factor) {
    for (Slot& s : slots_) {
        if (!s.p.has_grad()) continue;
        for (double& g : s.p.grad()) g *= factor;
    }
}

double AdamW::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (Slot& s : slots_) {
        if (!s.p.has_grad()) continue;
        for (double g : s.p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (Slot& s : slots_) {
            if (!s.p.has_grad()) continue;
            for (double& g : s.p.grad()) g *= scale;
        }
    }
    return norm;
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Slot& s : slots_) {
        if (!s.p.has_grad()) continue;
        const std::vector<double>& g = s.p.grad();
        std::vector<double>& p = s.p.value();
        for (std::size_t i = 0; i < p.size(); ++i) {
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[i]);
        }
    }
}

std::string train_log_header() { return "step,lr,loss_total,loss_v,loss_s,loss_m,grad_norm"; }

std::string train_log_line(const TrainLogRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                  static_cast<long long>(row.step), row.lr, row.loss_total, row.loss_v,
                  row.loss_s, row.loss_m, row.grad_norm);
    return buf;
}

void write_train_log(const std::vector<TrainLogRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open training log for writing: " + path);
    out << train_log_header() << "\n";
    for (const TrainLogRow& r : rows) out << train_log_line(r) << "\n";
    if (!out) throw std::runtime_error("failed writing training log: " + path);
}

PairSample prepare_sample(const ViewPair& pair) {
    PairSample s;
    s.feat_q = encode_patches(pair.query_image, visual_encoder_settings());
    s.feat_t = encode_patches(pair.target_image, visual_encoder_settings());
    s.feat_qa = encode_patches(pair.query_image, anchor_encoder_settings());
    s.feat_ta = encode_patches(pair.target_image, anchor_encoder_settings());
    s.pair = pair;
    return s;
}

std::vector<PairSample> prepare_samples(const std::vector<ViewPair>& pairs) {
    std::vector<PairSample> out;
    out.reserve(pairs.size());
    for (const ViewPair& p : pairs) out.push_back(prepare_sample(p));
    return out;
}

std::vector<double> pooled_region_feature(const FeatureGrid& feat, const Mask& m) {
    for (double th : {0.5, 0.25, 0.1, 0.01}) {
        if (!project_mask_to_grid(m, feat, th).empty()) return mask_pool(feat, m, th);
    }
    throw std::invalid_argument("pooled_region_feature: mask has no foreground");
}

DecoderParams pretrain_point_decoder(const std::vector<PairSample>& data, const TrainConfig& cfg,
                                     std::vector<TrainLogRow>* log) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("pretrain_point_decoder: empty dataset");

    // One single-view sample per view of every pair.
    struct Entry {
        const FeatureGrid* feat;
        const Mask* mask;
        std::vector<int> fg;
    };
    std::vector<Entry> entries;
    entries.reserve(2 * data.size());
    for (const PairSample& s : data) {
        entries.push_back({&s.feat_q, &s.pair.query_mask, foreground_pixels(s.pair.query_mask)});
        entries.push_back({&s.feat_t, &s.pair.target_mask, foreground_pixels(s.pair.target_mask)});
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].fg.empty())
            throw std::invalid_argument("pretrain_point_decoder: sample " + std::to_string(i) +
                                        " has an empty mask");
    }

    Rng rng(mix_seed(cfg.seed, kSaltPretrain));
    DecoderConfig dcfg;
    dcfg.feat_dim = data[0].feat_q.dim;
    dcfg.patch_size = data[0].feat_q.patch_size;
    DecoderParams params = init_decoder(dcfg, rng);

    std::vector<nn::Var> opt_params;
    for (auto& [name, v] : params.named_params()) opt_params.push_back(v);
    AdamW opt(opt_params, cfg.beta1, cfg.beta2, cfg.weight_decay);

    const std::int64_t total_steps = planned_steps(entries.size(), cfg);
    std::vector<int> order(entries.size());
    std::iota(order.begin(), order.end(), 0);

    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs && step < total_steps; ++epoch) {
        fisher_yates(order, rng);
        std::size_t cursor = 0;
        const std::size_t consume =
            static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(cfg.grad_accum);
        while (cursor + consume <= entries.size() && step < total_steps) {
            opt.zero_grad();
            double batch_loss = 0.0;
            for (int micro = 0; micro < cfg.grad_accum; ++micro) {
                nn::Var acc;
                for (int b = 0; b < cfg.batch_size; ++b) {
                    const Entry& e = entries[static_cast<std::size_t>(order[cursor++])];
                    const int pick = static_cast<int>(
                        rng.uniform_int(0, static_cast<std::int64_t>(e.fg.size()) - 1));
                    const int px = e.fg[static_cast<std::size_t>(pick)];
                    const Point2D pt{px % e.mask->width + 0.5, px / e.mask->width + 0.5,
                                     Frame::Canonical};
                    PromptEmbedding prompt =
                        encode_point_prompt(single_point_prompt(pt), e.feat->orig_width,
                                            e.feat->orig_height, dcfg.dim);
                    std::vector<nn::Var> tokens = {
                        nn::Var::constant({1, dcfg.dim}, prompt.tokens[0])};
                    nn::Var logits = decode_mask_graph(*e.feat, tokens, prompt.kinds, params);
                    nn::Var li = mask_loss_graph(logits, *e.mask, cfg.loss.ce_weight,
                                                 cfg.loss.dice_weight);
                    acc = acc.defined() ? nn::add(acc, li) : li;
                }
                nn::Var loss = nn::mul_scalar(acc, 1.0 / cfg.batch_size);
                nn::backward(loss);
                batch_loss += loss.scalar_value();
            }
            if (cfg.grad_accum > 1) opt.scale_grads(1.0 / cfg.grad_accum);
            batch_loss /= cfg.grad_accum;
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error("pretrain_point_decoder: non-finite loss at step " +
                                         std::to_string(step));
            }
            const double gnorm = opt.clip_grad_norm(cfg.grad_clip_norm);
            const double lr = lr_at_step(step, total_steps, cfg);
            opt.step(lr);
            if (log) log->push_back({step, lr, batch_loss, 0.0, 0.0, batch_loss, gnorm});
            ++step;
        }
    }
    return params;
}

double eval_point_decoder(DecoderParams& params, const std::vector<PairSample>& data) {
    if (data.empty()) throw std::invalid_argument("eval_point_decoder: empty dataset");
    double iou_sum = 0.0;
    int n = 0;
    auto eval_one = [&](const FeatureGrid& feat, const Mask& gt) {
        const Point2D pt = deterministic_object_point(gt);
        PromptEmbedding prompt = encode_point_prompt(single_point_prompt(pt), feat.orig_width,
                                                     feat.orig_height, params.cfg.dim);
        MaskLogits logits = decode_mask(feat, prompt, params);
        iou_sum += compute_iou(logits.threshold(0.5), gt);
        ++n;
    };
    for (const PairSample& s : data) {
        eval_one(s.feat_q, s.pair.query_mask);
        eval_one(s.feat_t, s.pair.target_mask);
    }
    return iou_sum / n;
}

Expert train_expert(ExpertKind kind, const std::vector<PairSample>& data, const TrainConfig& cfg,
                    const DecoderParams& point_decoder, std::vector<TrainLogRow>* log,
                    std::int64_t start_step, const Expert* resume_from) {
    cfg.validate();
    if (kind == ExpertKind::Anchor)
        throw std::invalid_argument("train_expert: the anchor expert is training-free");
    if (data.empty()) throw std::invalid_argument("train_expert: empty dataset");
    if (start_step < 0) throw std::invalid_argument("train_expert: start_step must be >= 0");

    const std::uint64_t salt = kind == ExpertKind::Visual ? kSaltVisual : kSaltFusion;
    std::uint64_t run_seed = mix_seed(cfg.seed, salt);
    if (start_step > 0) run_seed = mix_seed(run_seed, static_cast<std::uint64_t>(start_step));
    Rng rng(run_seed);

    Expert ex;
    ex.kind = kind;
    if (resume_from != nullptr) {
        if (resume_from->kind != kind)
            throw std::invalid_argument("train_expert: resume expert kind mismatch");
        if (!resume_from->matcher.has_value())
            throw std::invalid_argument("train_expert: resume expert has no matcher");
        ex.decoder = resume_from->decoder.clone();
        ex.matcher = resume_from->matcher->clone();
    } else {
        ex.decoder = point_decoder.clone();
        VPMatcherConfig mcfg;
        mcfg.dim = data[0].feat_q.dim;
        ex.matcher = init_vpmatcher(mcfg, rng);
    }

    // Constant inputs reused every epoch: target region features and, for the
    // fusion expert, the geometric point tokens.
    std::vector<std::vector<double>> v_t(data.size());
    std::vector<PromptEmbedding> point_tokens(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        v_t[i] = pooled_region_feature(data[i].feat_t, data[i].pair.target_mask);
        if (kind == ExpertKind::Fusion) {
            AnchorPrompt ap = generate_anchor_prompt(data[i].feat_qa, data[i].feat_ta,
                                                     data[i].pair.query_mask, cfg.anchor);
            point_tokens[i] = encode_point_prompt(ap, data[i].feat_ta.orig_width,
                                                  data[i].feat_ta.orig_height, ex.decoder.cfg.dim);
        }
    }

    std::vector<nn::Var> opt_params;
    for (auto& [name, v] : ex.matcher->named_params()) opt_params.push_back(v);
    for (auto& [name, v] : ex.decoder.named_params()) opt_params.push_back(v);
    AdamW opt(opt_params, cfg.beta1, cfg.beta2, cfg.weight_decay);

    const std::int64_t total_steps = planned_steps(data.size(), cfg);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::int64_t step = start_step;
    while (step < total_steps) {
        fisher_yates(order, rng);
        std::size_t cursor = 0;
        const std::size_t consume =
            static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(cfg.grad_accum);
        while (cursor + consume <= data.size() && step < total_steps) {
            opt.zero_grad();
            double sum_total = 0.0, sum_v = 0.0, sum_s = 0.0, sum_m = 0.0;
            for (int micro = 0; micro < cfg.grad_accum; ++micro) {
                std::vector<nn::Var> vc_batch, vt_batch;
                nn::Var ls_acc, lm_acc;
                for (int b = 0; b < cfg.batch_size; ++b) {
                    const int idx = order[cursor++];
                    const PairSample& s = data[static_cast<std::size_t>(idx)];
                    VPMatcherOutput out =
                        vpmatcher_forward(s.feat_q, s.pair.query_mask, *ex.matcher);
                    vc_batch.push_back(out.v_c_hat);
                    vt_batch.push_back(nn::Var::constant(
                        {1, static_cast<int>(v_t[static_cast<std::size_t>(idx)].size())},
                        v_t[static_cast<std::size_t>(idx)]));

                    nn::Var ls_i = mask_loss_graph(out.mc_logits, s.pair.target_mask,
                                                   cfg.loss.ce_weight, cfg.loss.dice_weight);

                    std::vector<nn::Var> tokens;
                    std::vector<TokenKind> kinds;
                    if (kind == ExpertKind::Fusion) {
                        const PromptEmbedding& pe = point_tokens[static_cast<std::size_t>(idx)];
                        for (std::size_t t = 0; t < pe.tokens.size(); ++t) {
                            tokens.push_back(
                                nn::Var::constant({1, ex.decoder.cfg.dim}, pe.tokens[t]));
                            kinds.push_back(TokenKind::Point);
                        }
                    }
                    tokens.push_back(out.prompt);
                    kinds.push_back(TokenKind::Visual);
                    nn::Var logits = decode_mask_graph(s.feat_t, tokens, kinds, ex.decoder);
                    nn::Var lm_i = mask_loss_graph(logits, s.pair.target_mask, cfg.loss.ce_weight,
                                                   cfg.loss.dice_weight);
                    ls_acc = ls_acc.defined() ? nn::add(ls_acc, ls_i) : ls_i;
                    lm_acc = lm_acc.defined() ? nn::add(lm_acc, lm_i) : lm_i;
                }
                nn::Var l_v = contrastive_loss_graph(vc_batch, vt_batch, cfg.loss.temperature);
                nn::Var l_s = nn::mul_scalar(ls_acc, 1.0 / cfg.batch_size);
                nn::Var l_m = nn::mul_scalar(lm_acc, 1.0 / cfg.batch_size);
                nn::Var loss = total_loss_graph(l_v, l_s, l_m, cfg.loss, step);
                nn::backward(loss);
                sum_total += loss.scalar_value();
                sum_v += l_v.scalar_value();
                sum_s += l_s.scalar_value();
                sum_m += l_m.scalar_value();
            }
            if (cfg.grad_accum > 1) opt.scale_grads(1.0 / cfg.grad_accum);
            sum_total /= cfg.grad_accum;
            sum_v /= cfg.grad_accum;
            sum_s /= cfg.grad_accum;
            sum_m /= cfg.grad_accum;
            if (!std::isfinite(sum_total)) {
                throw std::runtime_error("train_expert: non-finite loss at step " +
                                         std::to_string(step));
            }
            const double gnorm = opt.clip_grad_norm(cfg.grad_clip_norm);
            const double lr = lr_at_step(step, total_steps, cfg);
            opt.step(lr);
            if (log) log->push_back({step, lr, sum_total, sum_v, sum_s, sum_m, gnorm});
            ++step;
        }
    }
    return ex;
}

Expert make_anchor_expert(const DecoderParams& point_decoder) {
    Expert ex;
    ex.kind = ExpertKind::Anchor;
    ex.decoder = point_decoder.clone();
    return ex;
}

PromptEmbedding build_prompt(Expert& expert, const PairSample& s, const AnchorConfig& anchor_cfg) {
    const int w = s.feat_t.orig_width;
    const int h = s.feat_t.orig_height;
    if (expert.kind != ExpertKind::Anchor && !expert.matcher.has_value())
        throw std::invalid_argument("build_prompt: expert is missing matcher parameters");
    switch (expert.kind) {
        case ExpertKind::Anchor: {
            AnchorPrompt ap =
                generate_anchor_prompt(s.feat_qa, s.feat_ta, s.pair.query_mask, anchor_cfg);
            return encode_point_prompt(ap, w, h, expert.decoder.cfg.dim);
        }
        case ExpertKind::Visual: {
            VPMatcherOutput out = vpmatcher_forward(s.feat_q, s.pair.query_mask, *expert.matcher);
            return encode_visual_prompt(out.prompt.value());
        }
        case ExpertKind::Fusion: {
            AnchorPrompt ap =
                generate_anchor_prompt(s.feat_qa, s.feat_ta, s.pair.query_mask, anchor_cfg);
            PromptEmbedding points = encode_point_prompt(ap, w, h, expert.decoder.cfg.dim);
            VPMatcherOutput out = vpmatcher_forward(s.feat_q, s.pair.query_mask, *expert.matcher);
            return concat_prompts(points, encode_visual_prompt(out.prompt.value()));
        }
    }
    throw std::invalid_argument("build_prompt: bad expert kind");
}

Mask predict_mask(Expert& expert, const PairSample& s, const AnchorConfig& anchor_cfg) {
    PromptEmbedding prompt = build_prompt(expert, s, anchor_cfg);
    MaskLogits logits = decode_mask(s.feat_t, prompt, expert.decoder);
    return logits.threshold(0.5);
}

double eval_expert(Expert& expert, const std::vector<PairSample>& data,
                   const AnchorConfig& anchor_cfg) {
    if (data.empty()) throw std::invalid_argument("eval_expert: empty dataset");
    double iou_sum = 0.0;
    for (const PairSample& s : data) {
        iou_sum += compute_iou(predict_mask(expert, s, anchor_cfg), s.pair.target_mask);
    }
    return iou_sum / static_cast<double>(data.size());
}

}  // namespace v2lab
