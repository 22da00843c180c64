#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "v2lab/matcher.hpp"
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

Mask block_mask(int w, int h, int x0, int y0, int x1, int y1) {
    Mask m(w, h);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.set(x, y, 1);
    return m;
}

void zero_params(std::vector<ConvStage>& stack) {
    for (ConvStage& s : stack) {
        for (double& v : s.w.value()) v = 0.0;
        for (double& v : s.b.value()) v = 0.0;
    }
}

}  // namespace

TEST_CASE("mask pooling averages foreground descriptors") {
    FeatureGrid g = random_grid(2, 2, 4, 1);
    // cover patch 0 fully, patch 1 fully; patches 2, 3 stay background
    const Mask m = block_mask(16, 16, 0, 0, 16, 8);
    const RegionFeature v = mask_pool(g, m);
    REQUIRE(v.size() == 4);
    for (int f = 0; f < 4; ++f) {
        const double expect = 0.5 * (static_cast<double>(g.value(f, 0, 0)) + g.value(f, 0, 1));
        CHECK(v[static_cast<std::size_t>(f)] == doctest::Approx(expect).epsilon(1e-12));
    }

    // single-patch mask returns that descriptor
    const RegionFeature one = mask_pool(g, block_mask(16, 16, 0, 0, 8, 8));
    for (int f = 0; f < 4; ++f) {
        CHECK(one[static_cast<std::size_t>(f)] ==
              doctest::Approx(static_cast<double>(g.value(f, 0, 0))).epsilon(1e-12));
    }

    CHECK_THROWS_AS(mask_pool(g, Mask(16, 16)), std::invalid_argument);
    // a sliver below the coverage threshold is still empty
    CHECK_THROWS_AS(mask_pool(g, block_mask(16, 16, 0, 0, 2, 2), 0.5), std::invalid_argument);
}

TEST_CASE("initialization starts modulation and gate at zero effect") {
    Rng rng(7);
    const VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    for (double v : p.cond_w.value()) CHECK(v == 0.0);
    for (double v : p.cond_b.value()) CHECK(v == 0.0);
    for (double v : p.gate_w.value()) CHECK(v == 0.0);
    CHECK(p.gate_b.value()[0] == 4.0);

    CHECK_THROWS_AS(init_vpmatcher(VPMatcherConfig{6}, rng), std::invalid_argument);
    CHECK_THROWS_AS(init_vpmatcher(VPMatcherConfig{8, 0}, rng), std::invalid_argument);
}

TEST_CASE("zero-initialized modulation and mask encoder leave the prior untouched") {
    Rng rng(3);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    zero_params(p.f_mask);  // latent contribution becomes exactly zero

    Rng mask_rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Mask mq(32, 32);
        for (auto& v : mq.data) v = mask_rng.uniform() < 0.3 ? 1 : 0;

        Var v_q = Var::constant({1, 8}, std::vector<double>(8, 0.0));
        for (double& x : v_q.value()) x = mask_rng.normal();

        const StructuralOutput out = structural_mapping_forward(mq, v_q, p);
        const Var m_prior = mask_latent_map(mq, p.f_prior);
        REQUIRE(out.m_tilde.numel() == m_prior.numel());
        for (int i = 0; i < m_prior.numel(); ++i) {
            CHECK(out.m_tilde.value()[static_cast<std::size_t>(i)] ==
                  m_prior.value()[static_cast<std::size_t>(i)]);  // bit-exact
        }
    }
}

TEST_CASE("zero-initialized conditioner ignores the region feature entirely") {
    Rng rng(5);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    const Mask mq = block_mask(32, 32, 8, 8, 20, 24);

    const Var v1 = Var::constant({1, 8}, {1.0, -2.0, 0.5, 3.0, -1.0, 0.0, 2.0, -0.5});
    const Var v2 = Var::constant({1, 8}, {9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0});
    const StructuralOutput a = structural_mapping_forward(mq, v1, p);
    const StructuralOutput b = structural_mapping_forward(mq, v2, p);
    CHECK(a.logits.value() == b.logits.value());

    // a perturbed conditioner makes the modulation real
    p.cond_w.value()[0] = 0.5;
    const StructuralOutput c = structural_mapping_forward(mq, v1, p);
    const StructuralOutput d = structural_mapping_forward(mq, v2, p);
    CHECK_FALSE(c.logits.value() == d.logits.value());
}

TEST_CASE("an explicit all-ones gate equals the ungated path") {
    Rng rng(9);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 13);
    const Var p_f = Var::constant({1, 8}, {0.3, -0.1, 0.7, 0.2, -0.4, 0.9, 0.0, 0.5});

    const Var plain = feature_mapping_forward(p_f, feat, p);
    const Var ones = Var::constant({1, 16}, std::vector<double>(16, 1.0));
    const Var gated = feature_mapping_forward(p_f, feat, p, ones);
    REQUIRE(plain.numel() == gated.numel());
    for (int i = 0; i < plain.numel(); ++i) {
        CHECK(std::abs(plain.value()[static_cast<std::size_t>(i)] -
                       gated.value()[static_cast<std::size_t>(i)]) < 1e-12);
    }

    // the learned gate at init is spatially constant, so it is also neutral
    const Var mask_map = mask_latent_map(block_mask(32, 32, 4, 4, 20, 24), p.f_mask);
    const Var g = spatial_gate(mask_map, p, 4, 4);
    const Var learned = feature_mapping_forward(p_f, feat, p, g);
    for (int i = 0; i < plain.numel(); ++i) {
        CHECK(std::abs(plain.value()[static_cast<std::size_t>(i)] -
                       learned.value()[static_cast<std::size_t>(i)]) < 1e-12);
    }
}

TEST_CASE("a non-uniform gate changes the attention result") {
    Rng rng(15);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 17);
    const Var p_f = Var::constant({1, 8}, {0.3, -0.1, 0.7, 0.2, -0.4, 0.9, 0.0, 0.5});

    std::vector<double> weights(16, 1.0);
    weights[0] = 0.05;
    weights[5] = 0.01;
    const Var gate = Var::constant({1, 16}, std::move(weights));
    const Var gated = feature_mapping_forward(p_f, feat, p, gate);
    const Var plain = feature_mapping_forward(p_f, feat, p);
    bool different = false;
    for (int i = 0; i < plain.numel(); ++i) {
        if (std::abs(plain.value()[static_cast<std::size_t>(i)] -
                     gated.value()[static_cast<std::size_t>(i)]) > 1e-9) {
            different = true;
        }
    }
    CHECK(different);
}

TEST_CASE("full forward produces well-formed outputs and gradients") {
    Rng rng(21);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 23);
    const Mask mq = block_mask(32, 32, 8, 8, 24, 24);

    VPMatcherOutput out = vpmatcher_forward(feat, mq, p);
    CHECK(out.v_c_hat.shape() == std::vector<int>{1, 8});
    CHECK(out.prompt.shape() == std::vector<int>{1, 8});
    CHECK(out.mc_logits.numel() == 32 * 32);
    CHECK(nn::all_finite(out.v_c_hat));
    CHECK(nn::all_finite(out.mc_logits));
    CHECK(nn::all_finite(out.prompt));

    // same inputs, same parameters -> identical outputs
    VPMatcherOutput again = vpmatcher_forward(feat, mq, p);
    CHECK(out.v_c_hat.value() == again.v_c_hat.value());
    CHECK(out.mc_logits.value() == again.mc_logits.value());
    CHECK(out.prompt.value() == again.prompt.value());

    // gradients reach both branches and the fusion head
    const Var loss = nn::add(nn::sum(nn::mul(out.prompt, out.prompt)),
                             nn::add(nn::sum(nn::mul(out.v_c_hat, out.v_c_hat)),
                                     nn::mean(nn::mul(out.mc_logits, out.mc_logits))));
    nn::backward(loss);
    CHECK(p.layers[0].wq.has_grad());
    CHECK(p.fuse_w1.has_grad());
    CHECK(p.f_prior[0].w.has_grad());
    CHECK(p.f_dec[0].w.has_grad());
    CHECK(p.f_mask[0].w.has_grad());

    // dim mismatch is rejected
    const FeatureGrid wrong = random_grid(4, 4, 12, 31);
    CHECK_THROWS_AS(vpmatcher_forward(wrong, mq, p), std::invalid_argument);
}

TEST_CASE("structural-estimate pooling falls back when the estimate is empty") {
    Rng rng(33);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    const FeatureGrid feat = random_grid(4, 4, 8, 35);
    const Mask mq = block_mask(32, 32, 8, 8, 24, 24);

    p.f_dec.back().b.value()[0] = -100.0;  // estimate thresholded to empty
    VPMatcherOutput low = vpmatcher_forward(feat, mq, p);
    CHECK(low.vc_prime_fallback);

    p.f_dec.back().b.value()[0] = 100.0;  // estimate thresholded to full frame
    VPMatcherOutput high = vpmatcher_forward(feat, mq, p);
    CHECK_FALSE(high.vc_prime_fallback);
}

TEST_CASE("clone is deep and named parameters are unique") {
    Rng rng(41);
    VPMatcherParams p = init_vpmatcher(VPMatcherConfig{8}, rng);
    VPMatcherParams q = p.clone();

    const double before = q.layers[0].wq.value()[0];
    p.layers[0].wq.value()[0] = before + 10.0;
    CHECK(q.layers[0].wq.value()[0] == before);

    auto names = p.named_params();
    std::vector<std::string> seen;
    for (auto& [name, var] : names) {
        CHECK(var.defined());
        for (const std::string& s : seen) CHECK(s != name);
        seen.push_back(name);
    }
    CHECK(names.size() == q.named_params().size());
}
