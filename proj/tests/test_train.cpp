#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "v2lab/train.hpp"

using namespace v2lab;
using nn::Var;

namespace {

std::vector<PairSample> tiny_dataset(int n, std::uint64_t base_seed) {
    SceneConfig cfg;
    std::vector<ViewPair> pairs;
    for (int i = 0; i < n; ++i) {
        cfg.seed = mix_seed(base_seed, static_cast<std::uint64_t>(i));
        pairs.push_back(generate_pair(cfg));
    }
    return prepare_samples(pairs);
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("expert kind names round trip") {
    for (ExpertKind k : {ExpertKind::Anchor, ExpertKind::Visual, ExpertKind::Fusion}) {
        CHECK(expert_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(expert_kind_from_string("banana"), std::invalid_argument);
}

TEST_CASE("learning-rate schedule pins warmup, peak, and tail") {
    TrainConfig cfg;  // lr 4e-5, warmup_ratio 0.05
    const std::int64_t total = 1000;
    const double warm = 50.0;

    CHECK(lr_at_step(0, total, cfg) == 0.0);
    CHECK(lr_at_step(25, total, cfg) == doctest::Approx(cfg.lr * 0.5).epsilon(1e-12));
    CHECK(lr_at_step(49, total, cfg) == doctest::Approx(cfg.lr * 49.0 / warm).epsilon(1e-12));
    // junction: the cosine branch starts exactly at the warmup target
    CHECK(std::abs(lr_at_step(50, total, cfg) - cfg.lr) < 1e-12);
    // halfway through the decay the cosine gives exactly lr/2
    CHECK(lr_at_step(525, total, cfg) == doctest::Approx(cfg.lr * 0.5).epsilon(1e-9));
    CHECK(lr_at_step(1000, total, cfg) == 0.0);
    CHECK(lr_at_step(5000, total, cfg) == 0.0);

    // monotone decay after warmup
    double prev = lr_at_step(50, total, cfg);
    for (std::int64_t s = 51; s < 1000; s += 7) {
        const double cur = lr_at_step(s, total, cfg);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }

    CHECK_THROWS_AS(lr_at_step(0, 0, cfg), std::invalid_argument);
    CHECK_THROWS_AS(lr_at_step(-1, 10, cfg), std::invalid_argument);
}

TEST_CASE("optimizer minimizes a quadratic") {
    Var x = Var::leaf({1});
    x.value()[0] = 0.0;
    AdamW opt({x}, 0.9, 0.999, 0.0);
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        const Var diff = nn::add_scalar(x, -3.0);
        nn::backward(nn::sum(nn::mul(diff, diff)));
        opt.step(0.05);
    }
    CHECK(x.value()[0] == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("weight decay pulls parameters toward zero") {
    Var x = Var::leaf({1});
    x.value()[0] = 1.0;
    AdamW opt({x}, 0.9, 0.999, 0.5);
    for (int i = 0; i < 50; ++i) {
        opt.zero_grad();
        nn::backward(nn::sum(nn::mul_scalar(x, 0.0)));  // zero loss gradient
        opt.step(0.1);
    }
    CHECK(std::abs(x.value()[0]) < 1.0);  // decay acted despite zero gradient
}

TEST_CASE("gradient clipping rescales to the requested norm") {
    Var a = Var::leaf({1});
    Var b = Var::leaf({1});
    a.value()[0] = 1.0;
    b.value()[0] = 1.0;
    AdamW opt({a, b}, 0.9, 0.999, 0.0);

    nn::backward(nn::sum(nn::add(nn::mul_scalar(a, 3.0), nn::mul_scalar(b, 4.0))));
    const double pre = opt.clip_grad_norm(1.0);
    CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
    const double post = std::sqrt(a.grad()[0] * a.grad()[0] + b.grad()[0] * b.grad()[0]);
    CHECK(post <= 1.0 + 1e-6);
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-9));

    // below the limit nothing changes
    opt.zero_grad();
    nn::backward(nn::sum(nn::mul_scalar(a, 0.3)));
    CHECK(opt.clip_grad_norm(1.0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(a.grad()[0] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("parameters without gradients are left untouched") {
    Var used = Var::leaf({1});
    Var unused = Var::leaf({1});
    used.value()[0] = 1.0;
    unused.value()[0] = 2.0;
    AdamW opt({used, unused}, 0.9, 0.999, 0.1);
    opt.zero_grad();
    nn::backward(nn::sum(nn::mul(used, used)));
    opt.step(0.01);
    CHECK(used.value()[0] != 1.0);
    CHECK(unused.value()[0] == 2.0);  // no update, no decay

    // scale_grads halves accumulated gradients
    opt.zero_grad();
    nn::backward(nn::sum(nn::mul_scalar(used, 2.0)));
    opt.scale_grads(0.5);
    CHECK(used.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("train config round trips and validates") {
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.loss.lambda3 = 7.0;
    cfg.anchor.n_points = 2;
    cfg.seed = 99;
    const TrainConfig back = TrainConfig::from_config(cfg.to_config());
    CHECK(back.lr == doctest::Approx(1e-4));
    CHECK(back.epochs == 3);
    CHECK(back.batch_size == 4);
    CHECK(back.loss.lambda3 == doctest::Approx(7.0));
    CHECK(back.anchor.n_points == 2);
    CHECK(back.seed == 99);
    CHECK(back.to_config().hash() == cfg.to_config().hash());

    TrainConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("lr"), std::invalid_argument);
    bad = TrainConfig{};
    bad.warmup_ratio = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = TrainConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("log lines follow the csv contract") {
    CHECK(train_log_header() == "step,lr,loss_total,loss_v,loss_s,loss_m,grad_norm");
    TrainLogRow row;
    row.step = 12;
    row.lr = 4e-5;
    row.loss_total = 1.25;
    row.loss_v = 0.5;
    row.loss_s = 0.25;
    row.loss_m = 0.05;
    row.grad_norm = 2.0;
    CHECK(train_log_line(row) == "12,4e-05,1.25,0.5,0.25,0.05,2");

    const std::string path =
        (std::filesystem::temp_directory_path() / "v2lab_log_test.csv").string();
    write_train_log({row}, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == train_log_header());
    std::getline(in, line);
    CHECK(line == train_log_line(row));
    std::filesystem::remove(path);
}

TEST_CASE("prepared samples carry both feature grids") {
    const std::vector<PairSample> data = tiny_dataset(1, 900);
    const PairSample& s = data[0];
    CHECK(s.feat_q.dim == visual_encoder_settings().dim);
    CHECK(s.feat_qa.dim == anchor_encoder_settings().dim);
    CHECK(s.feat_q.rows == 8);
    CHECK(s.feat_q.cols == 8);
    CHECK(s.feat_ta.rows == 8);
    CHECK(s.feat_t.orig_width == 64);
}

TEST_CASE("region pooling relaxes its threshold for thin masks") {
    const std::vector<PairSample> data = tiny_dataset(1, 901);
    const FeatureGrid& feat = data[0].feat_q;

    // a 3x8 sliver covers 3/8 of one patch: empty at 0.5, present at 0.25
    Mask sliver(64, 64);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 8; ++x) sliver.set(x, y, 1);
    CHECK_THROWS_AS(mask_pool(feat, sliver, 0.5), std::invalid_argument);
    const std::vector<double> pooled = pooled_region_feature(feat, sliver);
    const RegionFeature direct = mask_pool(feat, sliver, 0.25);
    REQUIRE(pooled.size() == direct.size());
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        CHECK(pooled[i] == doctest::Approx(direct[i]).epsilon(1e-12));
    }

    // a healthy mask takes the strict threshold path
    const std::vector<double> normal =
        pooled_region_feature(feat, data[0].pair.query_mask);
    const RegionFeature strict = mask_pool(feat, data[0].pair.query_mask, 0.5);
    for (std::size_t i = 0; i < normal.size(); ++i) {
        CHECK(normal[i] == doctest::Approx(strict[i]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(pooled_region_feature(feat, Mask(64, 64)), std::invalid_argument);
}

TEST_CASE("point-decoder pretraining runs, logs, and evaluates") {
    const std::vector<PairSample> data = tiny_dataset(2, 902);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;  // 4 single-view entries, batch 2 -> 4 steps

    std::vector<TrainLogRow> rows;
    const DecoderParams dec = pretrain_point_decoder(data, cfg, &rows);
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].step == static_cast<std::int64_t>(i));
        CHECK(std::isfinite(rows[i].loss_total));
        CHECK(rows[i].loss_v == 0.0);  // decode-only objective
        CHECK(rows[i].loss_s == 0.0);
    }

    DecoderParams dec_mut = dec.clone();
    const double iou = eval_point_decoder(dec_mut, data);
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
}

TEST_CASE("expert training steps are deterministic and resumable") {
    const std::vector<PairSample> data = tiny_dataset(2, 903);
    TrainConfig cfg = tiny_config();
    cfg.max_steps = 2;  // keep the unit test fast
    cfg.epochs = 2;

    Rng drng(1);
    DecoderConfig dcfg;
    const DecoderParams dec = init_decoder(dcfg, drng);

    std::vector<TrainLogRow> rows_a, rows_b;
    Expert a = train_expert(ExpertKind::Visual, data, cfg, dec, &rows_a);
    Expert b = train_expert(ExpertKind::Visual, data, cfg, dec, &rows_b);
    REQUIRE(rows_a.size() == 2);
    REQUIRE(rows_b.size() == 2);
    for (std::size_t i = 0; i < rows_a.size(); ++i) {
        CHECK(train_log_line(rows_a[i]) == train_log_line(rows_b[i]));
    }
    CHECK(a.kind == ExpertKind::Visual);
    REQUIRE(a.matcher.has_value());
    CHECK(a.matcher->cfg.dim == data[0].feat_q.dim);

    // identical runs give bit-identical parameters
    auto pa = a.decoder.named_params();
    auto pb = b.decoder.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].second.value() == pb[i].second.value());
    }

    // training moved the decoder away from its initialization
    DecoderParams init_copy = dec.clone();
    bool moved = false;
    auto pi = init_copy.named_params();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].second.value() != pi[i].second.value()) moved = true;
    }
    CHECK(moved);

    // resume continues the global step numbering with the configured total
    std::vector<TrainLogRow> rows_c;
    Expert c = train_expert(ExpertKind::Visual, data, cfg, dec, &rows_c, 1, &a);
    REQUIRE(rows_c.size() == 1);
    CHECK(rows_c[0].step == 1);

    CHECK_THROWS_AS(train_expert(ExpertKind::Anchor, data, cfg, dec), std::invalid_argument);
    CHECK_THROWS_AS(train_expert(ExpertKind::Visual, {}, cfg, dec), std::invalid_argument);
}

TEST_CASE("prompts are assembled per expert kind") {
    const std::vector<PairSample> data = tiny_dataset(2, 904);
    TrainConfig cfg = tiny_config();
    cfg.max_steps = 1;

    Rng drng(2);
    const DecoderParams dec = init_decoder(DecoderConfig{}, drng);
    AnchorConfig acfg;

    Expert anchor = make_anchor_expert(dec);
    CHECK(anchor.kind == ExpertKind::Anchor);
    CHECK_FALSE(anchor.matcher.has_value());
    const PromptEmbedding ap = build_prompt(anchor, data[0], acfg);
    REQUIRE(ap.tokens.size() == 1);
    CHECK(ap.kinds[0] == TokenKind::Point);

    Expert visual = train_expert(ExpertKind::Visual, data, cfg, dec);
    const PromptEmbedding vp = build_prompt(visual, data[0], acfg);
    REQUIRE(vp.tokens.size() == 1);
    CHECK(vp.kinds[0] == TokenKind::Visual);

    Expert fusion = train_expert(ExpertKind::Fusion, data, cfg, dec);
    const PromptEmbedding fp = build_prompt(fusion, data[0], acfg);
    REQUIRE(fp.tokens.size() == 2);
    CHECK(fp.kinds[0] == TokenKind::Point);   // geometric tokens first
    CHECK(fp.kinds[1] == TokenKind::Visual);

    const Mask pred = predict_mask(anchor, data[0], acfg);
    CHECK(pred.width == 64);
    CHECK(pred.height == 64);

    const double iou = eval_expert(anchor, data, acfg);
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
}
