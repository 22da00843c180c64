#include "v2lab/matcher.hpp"

#include <cmath>
#include <stdexcept>

namespace v2lab {
namespace {

using nn::Var;

Var conv_stage_init(Rng& rng, int in_ch, int out_ch, int k) {
    const double std = std::sqrt(2.0 / (in_ch * k * k));
    return nn::randn_leaf({out_ch, in_ch, k, k}, rng, std);
}

Var tconv_stage_init(Rng& rng, int in_ch, int out_ch, int k) {
    const double std = std::sqrt(2.0 / (in_ch * k * k));
    return nn::randn_leaf({in_ch, out_ch, k, k}, rng, std);
}

Var dense_init(Rng& rng, int in_dim, int out_dim) {
    return nn::randn_leaf({in_dim, out_dim}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
}

/// Binary mask as a [1,H,W] constant.
Var mask_to_var(const Mask& m) {
    std::vector<double> v(m.data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.data[i] ? 1.0 : 0.0;
    return Var::constant({1, m.height, m.width}, std::move(v));
}

/// Query-view patch features as a constant [N, D] matrix.
Var grid_to_var(const FeatureGrid& g) {
    std::vector<double> v(static_cast<std::size_t>(g.num_patches()) * g.dim);
    for (int p = 0; p < g.num_patches(); ++p) {
        const int r = p / g.cols, c = p % g.cols;
        for (int f = 0; f < g.dim; ++f) {
            v[static_cast<std::size_t>(p) * g.dim + f] = g.value(f, r, c);
        }
    }
    return Var::constant({g.num_patches(), g.dim}, std::move(v));
}

void append_stack(std::vector<std::pair<std::string, Var>>& out, const std::string& prefix,
                  const std::vector<ConvStage>& stack) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        out.emplace_back(prefix + ".w" + std::to_string(i), stack[i].w);
        out.emplace_back(prefix + ".b" + std::to_string(i), stack[i].b);
    }
}

Var clone_var(const Var& v) {
    Var c = Var::leaf(v.shape(), v.requires_grad());
    c.value() = v.value();
    return c;
}

std::vector<ConvStage> clone_stack(const std::vector<ConvStage>& s) {
    std::vector<ConvStage> out;
    out.reserve(s.size());
    for (const ConvStage& st : s) out.push_back(ConvStage{clone_var(st.w), clone_var(st.b)});
    return out;
}

}  // namespace

std::vector<std::pair<std::string, Var>> VPMatcherParams::named_params() {
    std::vector<std::pair<std::string, Var>> out;
    append_stack(out, "f_mask", f_mask);
    append_stack(out, "f_prior", f_prior);
    append_stack(out, "f_dec", f_dec);
    out.emplace_back("gate.w", gate_w);
    out.emplace_back("gate.b", gate_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l);
        out.emplace_back(p + ".wq", layers[l].wq);
        out.emplace_back(p + ".wk", layers[l].wk);
        out.emplace_back(p + ".wv", layers[l].wv);
        out.emplace_back(p + ".ffn_w1", layers[l].ffn_w1);
        out.emplace_back(p + ".ffn_b1", layers[l].ffn_b1);
        out.emplace_back(p + ".ffn_w2", layers[l].ffn_w2);
        out.emplace_back(p + ".ffn_b2", layers[l].ffn_b2);
    }
    out.emplace_back("res.w1", res_w1);
    out.emplace_back("res.b1", res_b1);
    out.emplace_back("res.w2", res_w2);
    out.emplace_back("res.b2", res_b2);
    out.emplace_back("cond.w", cond_w);
    out.emplace_back("cond.b", cond_b);
    out.emplace_back("fuse.w1", fuse_w1);
    out.emplace_back("fuse.b1", fuse_b1);
    out.emplace_back("fuse.w2", fuse_w2);
    out.emplace_back("fuse.b2", fuse_b2);
    return out;
}

VPMatcherParams VPMatcherParams::clone() const {
    VPMatcherParams c;
    c.cfg = cfg;
    c.f_mask = clone_stack(f_mask);
    c.f_prior = clone_stack(f_prior);
    c.f_dec = clone_stack(f_dec);
    c.gate_w = clone_var(gate_w);
    c.gate_b = clone_var(gate_b);
    for (const AttnLayerParams& l : layers) {
        c.layers.push_back(AttnLayerParams{clone_var(l.wq), clone_var(l.wk), clone_var(l.wv),
                                           clone_var(l.ffn_w1), clone_var(l.ffn_b1),
                                           clone_var(l.ffn_w2), clone_var(l.ffn_b2)});
    }
    c.res_w1 = clone_var(res_w1);
    c.res_b1 = clone_var(res_b1);
    c.res_w2 = clone_var(res_w2);
    c.res_b2 = clone_var(res_b2);
    c.cond_w = clone_var(cond_w);
    c.cond_b = clone_var(cond_b);
    c.fuse_w1 = clone_var(fuse_w1);
    c.fuse_b1 = clone_var(fuse_b1);
    c.fuse_w2 = clone_var(fuse_w2);
    c.fuse_b2 = clone_var(fuse_b2);
    return c;
}

VPMatcherParams init_vpmatcher(const VPMatcherConfig& cfg, Rng& rng) {
    if (cfg.dim <= 0 || cfg.dim % 4 != 0) {
        throw std::invalid_argument("init_vpmatcher: dim must be a positive multiple of 4");
    }
    if (cfg.n_layers < 1) throw std::invalid_argument("init_vpmatcher: n_layers must be >= 1");
    VPMatcherParams p;
    p.cfg = cfg;
    const int d = cfg.dim;

    // Encoder stacks: 1 -> 8 -> 16 -> D_e, stride-2 3x3 convs.
    const int enc_ch[4] = {1, 8, 16, d};
    for (int s = 0; s < 3; ++s) {
        p.f_mask.push_back(ConvStage{conv_stage_init(rng, enc_ch[s], enc_ch[s + 1], 3),
                                     nn::zeros_leaf({enc_ch[s + 1]})});
        p.f_prior.push_back(ConvStage{conv_stage_init(rng, enc_ch[s], enc_ch[s + 1], 3),
                                      nn::zeros_leaf({enc_ch[s + 1]})});
    }
    // Decoder stack mirrors the widths: D_e -> 16 -> 8 -> 1, stride-2 4x4.
    const int dec_ch[4] = {d, 16, 8, 1};
    for (int s = 0; s < 3; ++s) {
        p.f_dec.push_back(ConvStage{tconv_stage_init(rng, dec_ch[s], dec_ch[s + 1], 4),
                                    nn::zeros_leaf({dec_ch[s + 1]})});
    }
    // Sparse-object prior: start the logit output biased toward background.
    p.f_dec.back().b.value()[0] = -2.0;

    // Gate starts nearly open (sigmoid(4) ~ 0.98) and spatially uniform, so
    // renormalization makes it an exact no-op at init.
    p.gate_w = nn::zeros_leaf({1, d, 1, 1});
    p.gate_b = nn::full_leaf({1}, 4.0);

    for (int l = 0; l < cfg.n_layers; ++l) {
        AttnLayerParams layer;
        layer.wq = dense_init(rng, d, d);
        layer.wk = dense_init(rng, d, d);
        layer.wv = dense_init(rng, d, d);
        layer.ffn_w1 = dense_init(rng, d, cfg.ffn());
        layer.ffn_b1 = nn::zeros_leaf({cfg.ffn()});
        layer.ffn_w2 = dense_init(rng, cfg.ffn(), d);
        layer.ffn_b2 = nn::zeros_leaf({d});
        p.layers.push_back(std::move(layer));
    }
    p.res_w1 = dense_init(rng, d, cfg.res());
    p.res_b1 = nn::zeros_leaf({cfg.res()});
    p.res_w2 = dense_init(rng, cfg.res(), d);
    p.res_b2 = nn::zeros_leaf({d});

    // FiLM conditioner starts at zero effect: gamma = beta = 0.
    p.cond_w = nn::zeros_leaf({d, 2 * d});
    p.cond_b = nn::zeros_leaf({2 * d});

    p.fuse_w1 = dense_init(rng, 2 * d, cfg.fusion());
    p.fuse_b1 = nn::zeros_leaf({cfg.fusion()});
    p.fuse_w2 = dense_init(rng, cfg.fusion(), d);
    p.fuse_b2 = nn::zeros_leaf({d});
    return p;
}

RegionFeature mask_pool(const FeatureGrid& feat, const Mask& m, double threshold) {
    const std::vector<int> fg = project_mask_to_grid(m, feat, threshold);
    if (fg.empty()) throw std::invalid_argument("mask_pool: mask projects to no foreground patch");
    RegionFeature v(static_cast<std::size_t>(feat.dim), 0.0);
    for (int p : fg) {
        const int r = p / feat.cols, c = p % feat.cols;
        for (int f = 0; f < feat.dim; ++f) v[static_cast<std::size_t>(f)] += feat.value(f, r, c);
    }
    for (double& x : v) x /= static_cast<double>(fg.size());
    return v;
}

nn::Var mask_latent_map(const Mask& mq, const std::vector<ConvStage>& stack) {
    Var x = mask_to_var(mq);
    for (std::size_t s = 0; s < stack.size(); ++s) {
        x = nn::conv2d(x, stack[s].w, stack[s].b, 2, 1);
        if (s + 1 < stack.size()) x = nn::relu(x);
    }
    return x;
}

nn::Var spatial_gate(const nn::Var& mask_map, const VPMatcherParams& params, int grid_rows,
                     int grid_cols) {
    Var g = nn::sigmoid(nn::conv2d(mask_map, params.gate_w, params.gate_b, 1, 0));
    int h = g.shape()[1], w = g.shape()[2];
    while (h < grid_rows || w < grid_cols) {
        g = nn::upsample_nearest2x(g);
        h *= 2;
        w *= 2;
    }
    if (h != grid_rows || w != grid_cols) {
        throw std::invalid_argument("spatial_gate: latent map does not upsample to the patch grid");
    }
    return nn::reshape(g, {1, grid_rows * grid_cols});
}

nn::Var feature_mapping_forward(const nn::Var& p_f, const FeatureGrid& feat_q,
                                VPMatcherParams& params, const nn::Var& gate) {
    if (feat_q.dim != params.cfg.dim) {
        throw std::invalid_argument("feature_mapping_forward: feature dim != model dim");
    }
    const Var feats = grid_to_var(feat_q);
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.cfg.dim));

    Var x = p_f;  // [1, D]
    for (AttnLayerParams& layer : params.layers) {
        const Var q = nn::matmul(x, layer.wq);
        const Var k = nn::matmul(feats, layer.wk);
        const Var v = nn::matmul(feats, layer.wv);
        Var attn = nn::softmax_rows(nn::mul_scalar(nn::matmul_t(q, k), scale));  // [1, N]
        if (gate.defined()) {
            attn = nn::mul(attn, gate);
            attn = nn::div_rows(attn, nn::row_sum(attn));
        }
        x = nn::add(x, nn::matmul(attn, v));
        const Var h = nn::relu(nn::linear(x, layer.ffn_w1, layer.ffn_b1));
        x = nn::add(x, nn::linear(h, layer.ffn_w2, layer.ffn_b2));
    }
    const Var h = nn::relu(nn::linear(x, params.res_w1, params.res_b1));
    Var out = nn::add(x, nn::linear(h, params.res_w2, params.res_b2));
    if (!nn::all_finite(out)) {
        throw std::runtime_error("feature_mapping_forward: non-finite activation");
    }
    return out;
}

StructuralOutput structural_mapping_forward(const Mask& mq, const nn::Var& v_q,
                                            VPMatcherParams& params) {
    const Var mask_map = mask_latent_map(mq, params.f_mask);
    const Var m_prior = mask_latent_map(mq, params.f_prior);

    const Var gb = nn::linear(v_q, params.cond_w, params.cond_b);  // [1, 2D]
    const int d = params.cfg.dim;
    const Var gamma = nn::slice_cols(gb, 0, d);
    const Var beta = nn::slice_cols(gb, d, 2 * d);

    Var m_tilde = nn::chan_scale(m_prior, nn::add_scalar(nn::tanh_(gamma), 1.0));
    m_tilde = nn::chan_add(m_tilde, beta);
    m_tilde = nn::add(m_tilde, mask_map);

    Var x = m_tilde;
    for (std::size_t s = 0; s < params.f_dec.size(); ++s) {
        x = nn::conv_transpose2d(x, params.f_dec[s].w, params.f_dec[s].b, 2, 1);
        if (s + 1 < params.f_dec.size()) x = nn::relu(x);
    }
    if (!nn::all_finite(x)) {
        throw std::runtime_error("structural_mapping_forward: non-finite activation");
    }
    return StructuralOutput{x, m_tilde};
}

nn::Var build_visual_prompt(const nn::Var& v_c, const nn::Var& v_c_prime,
                            VPMatcherParams& params) {
    if (v_c.numel() != v_c_prime.numel()) {
        throw std::invalid_argument("build_visual_prompt: feature dims differ");
    }
    const Var cat = nn::concat_cols(v_c, v_c_prime);
    const Var h = nn::relu(nn::linear(cat, params.fuse_w1, params.fuse_b1));
    return nn::linear(h, params.fuse_w2, params.fuse_b2);
}

VPMatcherOutput vpmatcher_forward(const FeatureGrid& feat_q, const Mask& mq,
                                  VPMatcherParams& params) {
    const RegionFeature vq_vec = mask_pool(feat_q, mq);
    const Var v_q = Var::constant({1, feat_q.dim}, RegionFeature(vq_vec));

    const Var mask_map = mask_latent_map(mq, params.f_mask);
    const Var p_f = nn::add(v_q, nn::spatial_mean(mask_map));
    const Var gate = spatial_gate(mask_map, params, feat_q.rows, feat_q.cols);

    VPMatcherOutput out;
    out.v_c_hat = feature_mapping_forward(p_f, feat_q, params, gate);

    StructuralOutput structural = structural_mapping_forward(mq, v_q, params);
    out.mc_logits = structural.logits;

    // Pool the query features under the thresholded structural estimate.
    // Thresholding is non-differentiable, so v_c' enters as a constant.
    Mask mc(mq.width, mq.height);
    const std::vector<double>& logits = structural.logits.value();
    for (std::size_t i = 0; i < mc.data.size(); ++i) mc.data[i] = logits[i] > 0.0 ? 1 : 0;

    Var v_c_prime;
    if (project_mask_to_grid(mc, feat_q, 0.5).empty()) {
        out.vc_prime_fallback = true;
        v_c_prime = out.v_c_hat;  // degenerate estimate: reuse v_c
    } else {
        v_c_prime = Var::constant({1, feat_q.dim}, mask_pool(feat_q, mc));
    }
    out.prompt = build_visual_prompt(out.v_c_hat, v_c_prime, params);
    return out;
}

}  // namespace v2lab
