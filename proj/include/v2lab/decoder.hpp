#pragma once

#include <string>
#include <utility>
#include <vector>

#include "v2lab/anchor.hpp"
#include "v2lab/features.hpp"
#include "v2lab/mask.hpp"
#include "v2lab/nn.hpp"

namespace v2lab {

enum class TokenKind { Point, Visual };

/// Prompt tokens ready for the decoder; order is part of the contract
/// (fused prompts keep anchor tokens first).
struct PromptEmbedding {
    std::vector<std::vector<double>> tokens;
    std::vector<TokenKind> kinds;
    int dim = 0;
};

struct DecoderConfig {
    int dim = 64;       // token width
    int feat_dim = 64;  // incoming patch-feature width
    int patch_size = 8; // patch size the conv head upsamples from
    int n_blocks = 2;
    int head_mid = 16;   // channels after the 1x1 feature reduction
    int ffn_hidden = 0;  // 0 -> dim
    int ffn() const { return ffn_hidden > 0 ? ffn_hidden : dim; }
};

struct DecoderBlockParams {
    nn::Var t_wq, t_wk, t_wv;                    // tokens attend to features
    nn::Var t_ffn_w1, t_ffn_b1, t_ffn_w2, t_ffn_b2;
    nn::Var x_wq, x_wk, x_wv;                    // features attend to tokens
    nn::Var x_ffn_w1, x_ffn_b1, x_ffn_w2, x_ffn_b2;
};

struct ConvHeadStage {
    nn::Var w;
    nn::Var b;
};

/// Toy prompt-conditioned mask decoder: each expert owns an independent
/// instance of these parameters.
struct DecoderParams {
    DecoderConfig cfg;
    nn::Var feat_w, feat_b;            // patch features -> token width
    nn::Var kind_point, kind_visual;   // learned kind embeddings
    std::vector<DecoderBlockParams> blocks;
    nn::Var head_w0, head_b0;          // 1x1 reduction
    std::vector<ConvHeadStage> head_up;  // transposed-conv upsampling chain
    nn::Var head_wf, head_bf;          // final 3x3 conv to 1 logit channel

    std::vector<std::pair<std::string, nn::Var>> named_params();
    DecoderParams clone() const;
};

DecoderParams init_decoder(const DecoderConfig& cfg, Rng& rng);

/// Sinusoidal encoding of normalized coordinates; dim must be a multiple
/// of 4 (sin/cos pairs for x and y).
std::vector<double> positional_encoding(double xn, double yn, int dim);

/// One token per anchor point: sinusoidal encoding of canonical coordinates
/// normalized by (canon_w, canon_h). Deterministic; learned kind embeddings
/// are added inside decode_mask.
PromptEmbedding encode_point_prompt(const AnchorPrompt& p, int canon_w, int canon_h, int dim);

/// Identity wrapper: a single token of kind visual.
PromptEmbedding encode_visual_prompt(const std::vector<double>& v);

/// a's tokens followed by b's (fusion keeps anchor tokens first).
PromptEmbedding concat_prompts(const PromptEmbedding& a, const PromptEmbedding& b);

/// Image-resolution mask logits.
struct MaskLogits {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Mask threshold(double probability = 0.5) const;
};

/// Graph-level decode: tokens may carry gradients (visual prompt training).
nn::Var decode_mask_graph(const FeatureGrid& feat_t, const std::vector<nn::Var>& tokens,
                          const std::vector<TokenKind>& kinds, DecoderParams& params);

/// Plain decode for inference paths.
MaskLogits decode_mask(const FeatureGrid& feat_t, const PromptEmbedding& prompt,
                       DecoderParams& params);

}  // namespace v2lab
