#pragma once

#include <string>
#include <utility>
#include <vector>

#include "v2lab/features.hpp"
#include "v2lab/mask.hpp"
#include "v2lab/nn.hpp"

namespace v2lab {

/// Region-level embedding (v_q, v_t, reconstructed cross-view features).
using RegionFeature = std::vector<double>;

struct VPMatcherConfig {
    int dim = 64;        // D_e
    int n_layers = 2;    // cross-attention blocks in the feature branch
    int ffn_hidden = 0;  // 0 -> 2*dim
    int res_hidden = 0;  // 0 -> 4*dim
    int fusion_hidden = 0;  // 0 -> 2*dim

    int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 2 * dim; }
    int res() const { return res_hidden > 0 ? res_hidden : 4 * dim; }
    int fusion() const { return fusion_hidden > 0 ? fusion_hidden : 2 * dim; }
};

struct ConvStage {
    nn::Var w;
    nn::Var b;
};

struct AttnLayerParams {
    nn::Var wq, wk, wv;                      // D_e x D_e projections
    nn::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // per-layer residual MLP
};

/// Learnable pieces of the dual-branch matcher. The three conv stacks use
/// channel widths (8, 16, D_e): f_mask / f_prior downsample the mask by 8x,
/// f_dec mirrors them back up to image resolution.
struct VPMatcherParams {
    VPMatcherConfig cfg;
    std::vector<ConvStage> f_mask;   // mask -> latent map (also pooled into p_f)
    std::vector<ConvStage> f_prior;  // mask -> structural prior m_prior
    std::vector<ConvStage> f_dec;    // latent -> mask logits
    nn::Var gate_w, gate_b;          // 1x1 conv over the f_mask map -> gate logit
    std::vector<AttnLayerParams> layers;
    nn::Var res_w1, res_b1, res_w2, res_b2;      // final residual MLP
    nn::Var cond_w, cond_b;                      // v_q -> (gamma, beta)
    nn::Var fuse_w1, fuse_b1, fuse_w2, fuse_b2;  // [v_c, v_c'] -> visual prompt

    std::vector<std::pair<std::string, nn::Var>> named_params();
    VPMatcherParams clone() const;
};

/// Random init; FiLM conditioner and spatial gate start at zero effect
/// (gamma = beta = 0, gate ~ 1) so the structural path begins as identity.
VPMatcherParams init_vpmatcher(const VPMatcherConfig& cfg, Rng& rng);

/// Mean descriptor over the mask's foreground patches (threshold rule of
/// project_mask_to_grid). Throws if nothing projects to foreground.
RegionFeature mask_pool(const FeatureGrid& feat, const Mask& m, double threshold = 0.5);

/// Strided conv stack applied to a binary mask, returning the [D_e, h, w]
/// latent map shared by both branches.
nn::Var mask_latent_map(const Mask& mq, const std::vector<ConvStage>& stack);

/// Spatial gate over feature-grid locations, derived from the f_mask latent
/// map and nearest-upsampled to the grid's resolution. Shape [1, rows*cols].
nn::Var spatial_gate(const nn::Var& mask_map, const VPMatcherParams& params, int grid_rows,
                     int grid_cols);

/// Feature branch: cross-attention of the fused prompt embedding p_f over
/// the query-view patch features, gate-modulated and renormalized, followed
/// by a residual MLP. `gate` may be undefined for the neutral (all-ones) case.
nn::Var feature_mapping_forward(const nn::Var& p_f, const FeatureGrid& feat_q,
                                VPMatcherParams& params, const nn::Var& gate = nn::Var());

struct StructuralOutput {
    nn::Var logits;   // cross-view mask estimate at image resolution
    nn::Var m_tilde;  // modulated latent
};

/// Structural branch: m_tilde = m_prior * (1 + tanh(gamma)) + beta + f_mask
/// latent, decoded to image-resolution logits.
StructuralOutput structural_mapping_forward(const Mask& mq, const nn::Var& v_q,
                                            VPMatcherParams& params);

/// Prompt fusion MLP over the concatenated pair [v_c, v_c'].
nn::Var build_visual_prompt(const nn::Var& v_c, const nn::Var& v_c_prime, VPMatcherParams& params);

struct VPMatcherOutput {
    nn::Var v_c_hat;       // mapped region feature
    nn::Var mc_logits;     // structural mask estimate
    nn::Var prompt;        // fused visual prompt
    bool vc_prime_fallback = false;  // thresholded mask was empty
};

/// Full dual-branch forward. v_q is pooled from feat_q under mq; the second
/// pooling input v_c' comes from the thresholded structural estimate (with
/// fallback to v_c when it is empty).
VPMatcherOutput vpmatcher_forward(const FeatureGrid& feat_q, const Mask& mq,
                                  VPMatcherParams& params);

}  // namespace v2lab
