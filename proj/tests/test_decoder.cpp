#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "v2lab/decoder.hpp"
#include "v2lab/rng.hpp"

using namespace v2lab;
using nn::Var;

namespace {

FeatureGrid random_grid(int rows, int cols, int dim, std::uint64_t seed, int patch_size = 8) {
    FeatureGrid g;
    g.rows = rows;
    g.cols = cols;
    g.dim = dim;
    g.patch_size = patch_size;
    g.orig_width = cols * patch_size;
    g.orig_height = rows * patch_size;
    g.data.resize(static_cast<std::size_t>(dim) * rows * cols);
    Rng rng(seed);
    for (float& v : g.data) v = static_cast<float>(rng.normal() * 0.3);
    return g;
}

DecoderConfig small_config() {
    DecoderConfig cfg;
    cfg.dim = 8;
    cfg.feat_dim = 8;
    cfg.patch_size = 8;
    cfg.n_blocks = 1;
    cfg.head_mid = 4;
    return cfg;
}

AnchorPrompt center_point(double x, double y) {
    AnchorPrompt p;
    p.points = {{x, y, Frame::Canonical}};
    p.labels = {1};
    return p;
}

}  // namespace

TEST_CASE("positional encoding is bounded, deterministic, and position-sensitive") {
    const std::vector<double> a = positional_encoding(0.3, 0.7, 16);
    REQUIRE(a.size() == 16);
    for (double v : a) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(a == positional_encoding(0.3, 0.7, 16));
    CHECK_FALSE(a == positional_encoding(0.31, 0.7, 16));
    CHECK_FALSE(a == positional_encoding(0.3, 0.71, 16));

    CHECK_THROWS_AS(positional_encoding(0.5, 0.5, 6), std::invalid_argument);
    CHECK_THROWS_AS(positional_encoding(0.5, 0.5, 0), std::invalid_argument);
}

TEST_CASE("point prompts encode canonical coordinates") {
    AnchorPrompt p;
    p.points = {{10.0, 20.0, Frame::Canonical}, {40.0, 50.0, Frame::Canonical}};
    p.labels = {1, 1};
    const PromptEmbedding e = encode_point_prompt(p, 64, 64, 16);
    REQUIRE(e.tokens.size() == 2);
    CHECK(e.dim == 16);
    CHECK(e.kinds == std::vector<TokenKind>{TokenKind::Point, TokenKind::Point});
    CHECK(e.tokens[0] == positional_encoding(10.0 / 64.0, 20.0 / 64.0, 16));
    CHECK(e.tokens[1] == positional_encoding(40.0 / 64.0, 50.0 / 64.0, 16));

    AnchorPrompt oob = center_point(70.0, 10.0);
    CHECK_THROWS_AS(encode_point_prompt(oob, 64, 64, 16), std::invalid_argument);
    AnchorPrompt none;
    CHECK_THROWS_AS(encode_point_prompt(none, 64, 64, 16), std::invalid_argument);
    AnchorPrompt bad = center_point(5.0, 5.0);
    bad.labels.clear();
    CHECK_THROWS_AS(encode_point_prompt(bad, 64, 64, 16), std::invalid_argument);
}

TEST_CASE("visual prompt wrapping and concatenation keep order") {
    const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    const PromptEmbedding e = encode_visual_prompt(v);
    REQUIRE(e.tokens.size() == 1);
    CHECK(e.tokens[0] == v);
    CHECK(e.kinds == std::vector<TokenKind>{TokenKind::Visual});
    CHECK(e.dim == 4);

    const PromptEmbedding pts = encode_point_prompt(center_point(8.0, 8.0), 16, 16, 4);
    const PromptEmbedding fused = concat_prompts(pts, e);
    REQUIRE(fused.tokens.size() == 2);
    CHECK(fused.kinds[0] == TokenKind::Point);  // geometric tokens stay first
    CHECK(fused.kinds[1] == TokenKind::Visual);
    CHECK(fused.tokens[1] == v);

    const PromptEmbedding wider = encode_visual_prompt({1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0});
    CHECK_THROWS_AS(concat_prompts(pts, wider), std::invalid_argument);
}

TEST_CASE("decode produces image-resolution logits and a sane threshold") {
    Rng rng(3);
    DecoderParams params = init_decoder(small_config(), rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 5);
    const PromptEmbedding prompt = encode_point_prompt(center_point(16.0, 16.0), 32, 32, 8);

    const MaskLogits logits = decode_mask(feat, prompt, params);
    CHECK(logits.width == 32);
    CHECK(logits.height == 32);
    REQUIRE(logits.data.size() == 32u * 32u);
    for (double v : logits.data) CHECK(std::isfinite(v));

    const Mask m = logits.threshold(0.5);
    CHECK(m.width == 32);
    CHECK(m.height == 32);
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        CHECK(m.data[i] == (logits.data[i] > 0.0 ? 1 : 0));
    }
    CHECK_THROWS_AS(logits.threshold(0.0), std::invalid_argument);
    CHECK_THROWS_AS(logits.threshold(1.0), std::invalid_argument);

    // decoding twice is deterministic
    const MaskLogits again = decode_mask(feat, prompt, params);
    CHECK(again.data == logits.data);
}

TEST_CASE("graph decode matches plain decode") {
    Rng rng(7);
    DecoderParams params = init_decoder(small_config(), rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 9);

    PromptEmbedding prompt = encode_point_prompt(center_point(20.0, 12.0), 32, 32, 8);
    prompt = concat_prompts(prompt, encode_visual_prompt(std::vector<double>(8, 0.25)));

    std::vector<Var> tokens;
    for (const auto& t : prompt.tokens) tokens.push_back(Var::constant({1, 8}, t));
    const Var graph = decode_mask_graph(feat, tokens, prompt.kinds, params);
    const MaskLogits plain = decode_mask(feat, prompt, params);

    REQUIRE(graph.numel() == static_cast<int>(plain.data.size()));
    CHECK(graph.value() == plain.data);
}

TEST_CASE("the token kind changes the decoding") {
    Rng rng(11);
    DecoderParams params = init_decoder(small_config(), rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 13);
    const std::vector<double> tok(8, 0.3);

    const Var as_point =
        decode_mask_graph(feat, {Var::constant({1, 8}, tok)}, {TokenKind::Point}, params);
    const Var as_visual =
        decode_mask_graph(feat, {Var::constant({1, 8}, tok)}, {TokenKind::Visual}, params);
    CHECK_FALSE(as_point.value() == as_visual.value());
}

TEST_CASE("different prompt points move the predicted region") {
    Rng rng(17);
    DecoderParams params = init_decoder(small_config(), rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 19);

    const MaskLogits a = decode_mask(feat, encode_point_prompt(center_point(4.0, 4.0), 32, 32, 8),
                                     params);
    const MaskLogits b = decode_mask(feat, encode_point_prompt(center_point(28.0, 28.0), 32, 32, 8),
                                     params);
    CHECK_FALSE(a.data == b.data);
}

TEST_CASE("gradients flow to decoder parameters and prompt tokens") {
    Rng rng(23);
    DecoderParams params = init_decoder(small_config(), rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 29);

    Var token = Var::leaf({1, 8});
    for (double& v : token.value()) v = 0.1;
    const Var out = decode_mask_graph(feat, {token}, {TokenKind::Visual}, params);
    nn::backward(nn::mean(nn::mul(out, out)));

    CHECK(token.has_grad());
    CHECK(params.feat_w.has_grad());
    CHECK(params.kind_visual.has_grad());
    CHECK(params.head_wf.has_grad());
    CHECK(params.blocks[0].t_wq.has_grad());
    CHECK_FALSE(params.kind_point.has_grad());  // unused kind stays untouched
}

TEST_CASE("decode validates its inputs") {
    Rng rng(31);
    DecoderParams params = init_decoder(small_config(), rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 37);
    const PromptEmbedding prompt = encode_point_prompt(center_point(16.0, 16.0), 32, 32, 8);

    const FeatureGrid wrong_dim = random_grid(4, 4, 12, 41);
    CHECK_THROWS_AS(decode_mask(wrong_dim, prompt, params), std::invalid_argument);

    const FeatureGrid wrong_patch = random_grid(4, 4, 8, 43, 4);
    CHECK_THROWS_AS(decode_mask(wrong_patch, prompt, params), std::invalid_argument);

    PromptEmbedding wrong_width = prompt;
    wrong_width.tokens[0].resize(4);
    wrong_width.dim = 4;
    CHECK_THROWS_AS(decode_mask(feat, wrong_width, params), std::invalid_argument);

    CHECK_THROWS_AS(decode_mask_graph(feat, {}, {}, params), std::invalid_argument);

    DecoderConfig bad = small_config();
    bad.dim = 6;
    CHECK_THROWS_AS(init_decoder(bad, rng), std::invalid_argument);
    bad = small_config();
    bad.patch_size = 5;
    CHECK_THROWS_AS(init_decoder(bad, rng), std::invalid_argument);
}

TEST_CASE("decoder clone is deep") {
    Rng rng(43);
    DecoderParams p = init_decoder(small_config(), rng);
    DecoderParams q = p.clone();
    const double before = q.feat_w.value()[0];
    p.feat_w.value()[0] = before + 5.0;
    CHECK(q.feat_w.value()[0] == before);

    auto names = p.named_params();
    std::vector<std::string> seen;
    for (auto& [name, var] : names) {
        CHECK(var.defined());
        for (const std::string& s : seen) CHECK(s != name);
        seen.push_back(name);
    }
}
