#include "v2lab/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace v2lab {
namespace {

using nn::Var;

constexpr double kPi = 3.14159265358979323846;

Var dense_init(Rng& rng, int in_dim, int out_dim) {
    return nn::randn_leaf({in_dim, out_dim}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
}

Var clone_var(const Var& v) {
    Var c = Var::leaf(v.shape(), v.requires_grad());
    c.value() = v.value();
    return c;
}

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

Var patch_posenc_const(const FeatureGrid& g, int dim) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(g.num_patches()) * dim);
    for (int p = 0; p < g.num_patches(); ++p) {
        double x = 0.0, y = 0.0;
        g.patch_center(p, x, y);
        const std::vector<double> enc =
            positional_encoding(x / g.orig_width, y / g.orig_height, dim);
        v.insert(v.end(), enc.begin(), enc.end());
    }
    return Var::constant({g.num_patches(), dim}, std::move(v));
}

}  // namespace

std::vector<std::pair<std::string, Var>> DecoderParams::named_params() {
    std::vector<std::pair<std::string, Var>> out;
    out.emplace_back("feat.w", feat_w);
    out.emplace_back("feat.b", feat_b);
    out.emplace_back("kind.point", kind_point);
    out.emplace_back("kind.visual", kind_visual);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        DecoderBlockParams& b = blocks[i];
        out.emplace_back(p + ".t_wq", b.t_wq);
        out.emplace_back(p + ".t_wk", b.t_wk);
        out.emplace_back(p + ".t_wv", b.t_wv);
        out.emplace_back(p + ".t_ffn_w1", b.t_ffn_w1);
        out.emplace_back(p + ".t_ffn_b1", b.t_ffn_b1);
        out.emplace_back(p + ".t_ffn_w2", b.t_ffn_w2);
        out.emplace_back(p + ".t_ffn_b2", b.t_ffn_b2);
        out.emplace_back(p + ".x_wq", b.x_wq);
        out.emplace_back(p + ".x_wk", b.x_wk);
        out.emplace_back(p + ".x_wv", b.x_wv);
        out.emplace_back(p + ".x_ffn_w1", b.x_ffn_w1);
        out.emplace_back(p + ".x_ffn_b1", b.x_ffn_b1);
        out.emplace_back(p + ".x_ffn_w2", b.x_ffn_w2);
        out.emplace_back(p + ".x_ffn_b2", b.x_ffn_b2);
    }
    out.emplace_back("head.w0", head_w0);
    out.emplace_back("head.b0", head_b0);
    for (std::size_t i = 0; i < head_up.size(); ++i) {
        out.emplace_back("head.up_w" + std::to_string(i), head_up[i].w);
        out.emplace_back("head.up_b" + std::to_string(i), head_up[i].b);
    }
    out.emplace_back("head.wf", head_wf);
    out.emplace_back("head.bf", head_bf);
    return out;
}

DecoderParams DecoderParams::clone() const {
    DecoderParams c;
    c.cfg = cfg;
    c.feat_w = clone_var(feat_w);
    c.feat_b = clone_var(feat_b);
    c.kind_point = clone_var(kind_point);
    c.kind_visual = clone_var(kind_visual);
    for (const DecoderBlockParams& b : blocks) {
        c.blocks.push_back(DecoderBlockParams{
            clone_var(b.t_wq), clone_var(b.t_wk), clone_var(b.t_wv), clone_var(b.t_ffn_w1),
            clone_var(b.t_ffn_b1), clone_var(b.t_ffn_w2), clone_var(b.t_ffn_b2), clone_var(b.x_wq),
            clone_var(b.x_wk), clone_var(b.x_wv), clone_var(b.x_ffn_w1), clone_var(b.x_ffn_b1),
            clone_var(b.x_ffn_w2), clone_var(b.x_ffn_b2)});
    }
    c.head_w0 = clone_var(head_w0);
    c.head_b0 = clone_var(head_b0);
    for (const ConvHeadStage& s : head_up) {
        c.head_up.push_back(ConvHeadStage{clone_var(s.w), clone_var(s.b)});
    }
    c.head_wf = clone_var(head_wf);
    c.head_bf = clone_var(head_bf);
    return c;
}

DecoderParams init_decoder(const DecoderConfig& cfg, Rng& rng) {
    if (cfg.dim <= 0 || cfg.dim % 4 != 0) {
        throw std::invalid_argument("init_decoder: dim must be a positive multiple of 4");
    }
    if (cfg.patch_size < 2 || (cfg.patch_size & (cfg.patch_size - 1)) != 0) {
        throw std::invalid_argument("init_decoder: patch_size must be a power of two >= 2");
    }
    DecoderParams p;
    p.cfg = cfg;
    p.feat_w = dense_init(rng, cfg.feat_dim, cfg.dim);
    p.feat_b = nn::zeros_leaf({cfg.dim});
    p.kind_point = nn::randn_leaf({1, cfg.dim}, rng, 0.02);
    p.kind_visual = nn::randn_leaf({1, cfg.dim}, rng, 0.02);
    for (int i = 0; i < cfg.n_blocks; ++i) {
        DecoderBlockParams b;
        b.t_wq = dense_init(rng, cfg.dim, cfg.dim);
        b.t_wk = dense_init(rng, cfg.dim, cfg.dim);
        b.t_wv = dense_init(rng, cfg.dim, cfg.dim);
        b.t_ffn_w1 = dense_init(rng, cfg.dim, cfg.ffn());
        b.t_ffn_b1 = nn::zeros_leaf({cfg.ffn()});
        b.t_ffn_w2 = dense_init(rng, cfg.ffn(), cfg.dim);
        b.t_ffn_b2 = nn::zeros_leaf({cfg.dim});
        b.x_wq = dense_init(rng, cfg.dim, cfg.dim);
        b.x_wk = dense_init(rng, cfg.dim, cfg.dim);
        b.x_wv = dense_init(rng, cfg.dim, cfg.dim);
        b.x_ffn_w1 = dense_init(rng, cfg.dim, cfg.ffn());
        b.x_ffn_b1 = nn::zeros_leaf({cfg.ffn()});
        b.x_ffn_w2 = dense_init(rng, cfg.ffn(), cfg.dim);
        b.x_ffn_b2 = nn::zeros_leaf({cfg.dim});
        p.blocks.push_back(std::move(b));
    }
    const double head_std = std::sqrt(2.0 / cfg.dim);
    p.head_w0 = nn::randn_leaf({cfg.head_mid, cfg.dim, 1, 1}, rng, head_std);
    p.head_b0 = nn::zeros_leaf({cfg.head_mid});
    int stages = 0;
    for (int ps = cfg.patch_size; ps > 1; ps /= 2) ++stages;
    int ch = cfg.head_mid;
    for (int s = 0; s < stages; ++s) {
        const int next = std::max(4, ch / 2);
        p.head_up.push_back(ConvHeadStage{
            nn::randn_leaf({ch, next, 4, 4}, rng, std::sqrt(2.0 / (ch * 16.0))),
            nn::zeros_leaf({next})});
        ch = next;
    }
    p.head_wf = nn::randn_leaf({1, ch, 3, 3}, rng, std::sqrt(2.0 / (ch * 9.0)));
    // Bias the initial logits toward background: objects are sparse.
    p.head_bf = nn::full_leaf({1}, -2.0);
    return p;
}

std::vector<double> positional_encoding(double xn, double yn, int dim) {
    if (dim <= 0 || dim % 4 != 0) {
        throw std::invalid_argument("positional_encoding: dim must be a positive multiple of 4");
    }
    const int freqs = dim / 4;
    std::vector<double> enc(static_cast<std::size_t>(dim));
    for (int k = 0; k < freqs; ++k) {
        const double w = kPi * (k + 1);
        enc[static_cast<std::size_t>(4 * k + 0)] = std::sin(w * xn);
        enc[static_cast<std::size_t>(4 * k + 1)] = std::cos(w * xn);
        enc[static_cast<std::size_t>(4 * k + 2)] = std::sin(w * yn);
        enc[static_cast<std::size_t>(4 * k + 3)] = std::cos(w * yn);
    }
    return enc;
}

PromptEmbedding encode_point_prompt(const AnchorPrompt& p, int canon_w, int canon_h, int dim) {
    if (p.points.empty()) throw std::invalid_argument("encode_point_prompt: no points");
    if (p.labels.size() != p.points.size()) {
        throw std::invalid_argument("encode_point_prompt: labels size mismatch");
    }
    PromptEmbedding out;
    out.dim = dim;
    for (const Point2D& pt : p.points) {
        if (pt.x < 0.0 || pt.x > canon_w || pt.y < 0.0 || pt.y > canon_h) {
            throw std::invalid_argument("encode_point_prompt: point outside canonical bounds");
        }
        out.tokens.push_back(positional_encoding(pt.x / canon_w, pt.y / canon_h, dim));
        out.kinds.push_back(TokenKind::Point);
    }
    return out;
}

PromptEmbedding encode_visual_prompt(const std::vector<double>& v) {
    PromptEmbedding out;
    out.dim = static_cast<int>(v.size());
    out.tokens.push_back(v);
    out.kinds.push_back(TokenKind::Visual);
    return out;
}

PromptEmbedding concat_prompts(const PromptEmbedding& a, const PromptEmbedding& b) {
    if (a.dim != b.dim) throw std::invalid_argument("concat_prompts: token dims differ");
    PromptEmbedding out = a;
    out.tokens.insert(out.tokens.end(), b.tokens.begin(), b.tokens.end());
    out.kinds.insert(out.kinds.end(), b.kinds.begin(), b.kinds.end());
    return out;
}

Mask MaskLogits::threshold(double probability) const {
    if (probability <= 0.0 || probability >= 1.0) {
        throw std::invalid_argument("MaskLogits::threshold: probability must be in (0, 1)");
    }
    const double cut = std::log(probability / (1.0 - probability));
    Mask m(width, height);
    for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = data[i] > cut ? 1 : 0;
    return m;
}

nn::Var decode_mask_graph(const FeatureGrid& feat_t, const std::vector<nn::Var>& tokens,
                          const std::vector<TokenKind>& kinds, DecoderParams& params) {
    if (tokens.empty()) throw std::invalid_argument("decode_mask: no prompt tokens");
    if (tokens.size() != kinds.size()) {
        throw std::invalid_argument("decode_mask: token/kind count mismatch");
    }
    if (feat_t.dim != params.cfg.feat_dim) {
        throw std::invalid_argument("decode_mask: feature dim != decoder feat_dim");
    }
    if (feat_t.patch_size != params.cfg.patch_size) {
        throw std::invalid_argument("decode_mask: grid patch size != decoder head patch size");
    }
    const int d = params.cfg.dim;
    for (const Var& t : tokens) {
        if (t.numel() != d) throw std::invalid_argument("decode_mask: token width mismatch");
    }

    // Tokens: prompt vectors plus their learned kind embeddings.
    std::vector<Var> kind_rows;
    kind_rows.reserve(tokens.size());
    for (TokenKind k : kinds) {
        kind_rows.push_back(k == TokenKind::Point ? params.kind_point : params.kind_visual);
    }
    Var t = nn::add(nn::concat_rows(tokens), nn::concat_rows(kind_rows));  // [n, D]

    // Patch tokens: projected features plus positional encoding.
    Var x = nn::add(nn::linear(grid_to_var(feat_t), params.feat_w, params.feat_b),
                    patch_posenc_const(feat_t, d));  // [N, D]

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (DecoderBlockParams& b : params.blocks) {
        // Prompt tokens gather evidence from the patch grid...
        Var attn_t = nn::softmax_rows(
            nn::mul_scalar(nn::matmul_t(nn::matmul(t, b.t_wq), nn::matmul(x, b.t_wk)), scale));
        t = nn::add(t, nn::matmul(attn_t, nn::matmul(x, b.t_wv)));
        t = nn::add(t, nn::linear(nn::relu(nn::linear(t, b.t_ffn_w1, b.t_ffn_b1)), b.t_ffn_w2,
                                  b.t_ffn_b2));
        // ...and the grid absorbs the prompt.
        Var attn_x = nn::softmax_rows(
            nn::mul_scalar(nn::matmul_t(nn::matmul(x, b.x_wq), nn::matmul(t, b.x_wk)), scale));
        x = nn::add(x, nn::matmul(attn_x, nn::matmul(t, b.x_wv)));
        x = nn::add(x, nn::linear(nn::relu(nn::linear(x, b.x_ffn_w1, b.x_ffn_b1)), b.x_ffn_w2,
                                  b.x_ffn_b2));
    }

    Var map = nn::rows_to_chw(x, feat_t.rows, feat_t.cols);
    map = nn::relu(nn::conv2d(map, params.head_w0, params.head_b0, 1, 0));
    for (const ConvHeadStage& s : params.head_up) {
        map = nn::relu(nn::conv_transpose2d(map, s.w, s.b, 2, 1));
    }
    map = nn::conv2d(map, params.head_wf, params.head_bf, 1, 1);
    map = nn::crop2d(map, feat_t.orig_height, feat_t.orig_width);
    if (!nn::all_finite(map)) throw std::runtime_error("decode_mask: non-finite logits");
    return map;  // [1, H, W]
}

MaskLogits decode_mask(const FeatureGrid& feat_t, const PromptEmbedding& prompt,
                       DecoderParams& params) {
    if (prompt.dim != params.cfg.dim) {
        throw std::invalid_argument("decode_mask: prompt dim != decoder dim");
    }
    std::vector<Var> tokens;
    tokens.reserve(prompt.tokens.size());
    for (const auto& tok : prompt.tokens) {
        tokens.push_back(Var::constant({1, prompt.dim}, std::vector<double>(tok)));
    }
    const Var logits = decode_mask_graph(feat_t, tokens, prompt.kinds, params);
    MaskLogits out;
    out.width = feat_t.orig_width;
    out.height = feat_t.orig_height;
    out.data = logits.value();
    return out;
}

}  // namespace v2lab
