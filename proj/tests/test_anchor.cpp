#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "v2lab/anchor.hpp"
#include "v2lab/synth.hpp"
#include "v2lab/train.hpp"

using namespace v2lab;

namespace {

/// Grid with hand-set descriptors: one per patch, row-major patch order.
FeatureGrid make_grid(int rows, int cols, const std::vector<std::vector<float>>& descriptors,
                      int patch_size = 8) {
    REQUIRE(static_cast<int>(descriptors.size()) == rows * cols);
    FeatureGrid g;
    g.rows = rows;
    g.cols = cols;
    g.dim = static_cast<int>(descriptors[0].size());
    g.patch_size = patch_size;
    g.orig_width = cols * patch_size;
    g.orig_height = rows * patch_size;
    g.data.assign(static_cast<std::size_t>(g.dim) * rows * cols, 0.0f);
    for (int p = 0; p < rows * cols; ++p) {
        for (int f = 0; f < g.dim; ++f) {
            g.set_value(f, p / cols, p % cols, descriptors[static_cast<std::size_t>(p)]
                                                   [static_cast<std::size_t>(f)]);
        }
    }
    return g;
}

}  // namespace

TEST_CASE("similarity heatmap matches hand-computed cosines") {
    const FeatureGrid fq = make_grid(1, 2, {{1.0f, 0.0f}, {0.0f, 2.0f}});
    const FeatureGrid ft = make_grid(1, 2, {{3.0f, 0.0f}, {1.0f, 1.0f}});
    const Heatmap h = similarity_heatmap(fq, ft);
    REQUIRE(h.rows == 2);
    REQUIRE(h.cols == 2);
    CHECK(h.at(0, 0) == doctest::Approx(1.0));
    CHECK(h.at(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(h.at(1, 0) == doctest::Approx(0.0));
    CHECK(h.at(1, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));

    const FeatureGrid zero = make_grid(1, 1, {{0.0f, 0.0f}});
    CHECK_THROWS_WITH_AS(similarity_heatmap(zero, ft), doctest::Contains("query"),
                         std::invalid_argument);
    const FeatureGrid wrong_dim = make_grid(1, 1, {{1.0f, 0.0f, 0.0f}});
    CHECK_THROWS_AS(similarity_heatmap(wrong_dim, ft), std::invalid_argument);
}

TEST_CASE("argmax matching breaks ties toward the smallest target index") {
    Heatmap h;
    h.rows = 2;
    h.cols = 3;
    h.data = {0.2, 0.9, 0.9,   // row 0: tie between 1 and 2 -> 1
              0.7, 0.7, 0.1};  // row 1: tie between 0 and 1 -> 0
    const MatchSet m = best_matches(h, {0, 1});
    REQUIRE(m.size() == 2);
    CHECK(m[0].query_index == 0);
    CHECK(m[0].target_index == 1);
    CHECK(m[0].score == doctest::Approx(0.9));
    CHECK(m[1].target_index == 0);
    CHECK(m[1].score == doctest::Approx(0.7));

    // only the listed foreground rows are matched
    const MatchSet one = best_matches(h, {1});
    REQUIRE(one.size() == 1);
    CHECK(one[0].query_index == 1);

    CHECK_THROWS_AS(best_matches(h, {}), std::invalid_argument);
    CHECK_THROWS_AS(best_matches(h, {5}), std::invalid_argument);
}

TEST_CASE("stratification keeps strictly separated points in score order") {
    const PointSet pts = {{0.0, 0.0, Frame::PatchGrid},
                          {1.0, 0.0, Frame::PatchGrid},
                          {3.0, 0.0, Frame::PatchGrid},
                          {3.0, 4.0, Frame::PatchGrid}};
    const std::vector<double> scores = {1.0, 0.9, 0.8, 0.7};

    const PointSet kept = stratify_points(pts, scores, 2.0);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].x == doctest::Approx(0.0));
    CHECK(kept[1].x == doctest::Approx(3.0));
    CHECK(kept[1].y == doctest::Approx(0.0));
    CHECK(kept[2].y == doctest::Approx(4.0));

    // distance exactly min_dist is rejected (strictly farther required)
    const PointSet at_limit = {{0.0, 0.0, Frame::PatchGrid}, {2.0, 0.0, Frame::PatchGrid}};
    CHECK(stratify_points(at_limit, {1.0, 0.9}, 2.0).size() == 1);

    // zero radius keeps everything except exact duplicates
    CHECK(stratify_points(pts, scores, 0.0).size() == 4);

    CHECK_THROWS_AS(stratify_points({}, {}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(stratify_points(pts, {1.0}, 1.0), std::invalid_argument);
}

TEST_CASE("robust center rejects the outlier") {
    const PointSet pts = {{0.0, 0.0, Frame::PatchGrid},
                          {1.0, 1.0, Frame::PatchGrid},
                          {2.0, 2.0, Frame::PatchGrid},
                          {10.0, 10.0, Frame::PatchGrid}};
    const Point2D c = robust_center(pts, 3.0);
    CHECK(c.x == doctest::Approx(1.0));
    CHECK(c.y == doctest::Approx(1.0));
    CHECK(c.frame == Frame::PatchGrid);

    // zero MAD: only exact matches of the median survive
    const PointSet tight = {{5.0, 5.0, Frame::PatchGrid},
                            {5.0, 5.0, Frame::PatchGrid},
                            {5.0, 5.0, Frame::PatchGrid},
                            {9.0, 5.0, Frame::PatchGrid}};
    const Point2D t = robust_center(tight, 3.0);
    CHECK(t.x == doctest::Approx(5.0));
    CHECK(t.y == doctest::Approx(5.0));

    // single point is its own center
    const Point2D s = robust_center({{2.0, 7.0, Frame::PatchGrid}}, 3.0);
    CHECK(s.x == doctest::Approx(2.0));
    CHECK(s.y == doctest::Approx(7.0));

    CHECK_THROWS_AS(robust_center({}, 3.0), std::invalid_argument);
}

TEST_CASE("canonical coordinates scale patch centers") {
    FeatureGrid g;
    g.rows = 8;
    g.cols = 8;
    g.dim = 1;
    g.patch_size = 8;
    g.orig_width = 64;
    g.orig_height = 64;
    g.data.assign(64, 1.0f);

    const PointSet pts = {{4.5, 2.5, Frame::PatchGrid}};
    const PointSet canon = to_canonical_coords(pts, g);
    REQUIRE(canon.size() == 1);
    CHECK(canon[0].x == doctest::Approx(40.0));
    CHECK(canon[0].y == doctest::Approx(24.0));
    CHECK(canon[0].frame == Frame::Canonical);

    const PointSet scaled = to_canonical_coords(pts, g, 8, 8);
    CHECK(scaled[0].x == doctest::Approx(5.0));
    CHECK(scaled[0].y == doctest::Approx(3.0));

    const PointSet oob = {{8.0, 0.0, Frame::PatchGrid}};
    CHECK_THROWS_AS(to_canonical_coords(oob, g), std::invalid_argument);
}

TEST_CASE("anchor config validation names the constraint") {
    AnchorConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.n_points = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AnchorConfig{};
    cfg.min_dist = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AnchorConfig{};
    cfg.foreground_threshold = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("full prompt lands inside the true target object") {
    SceneConfig scfg;
    int hits = 0;
    const int trials = 12;
    for (std::uint64_t seed = 0; seed < trials; ++seed) {
        scfg.seed = 100 + seed;
        const PairSample s = prepare_sample(generate_pair(scfg));
        AnchorConfig cfg;
        const AnchorPrompt p = generate_anchor_prompt(s.feat_qa, s.feat_ta, s.pair.query_mask, cfg);
        REQUIRE(p.points.size() == 1);
        REQUIRE(p.labels.size() == 1);
        CHECK(p.labels[0] == 1);
        CHECK(p.points[0].frame == Frame::Canonical);

        const int px = static_cast<int>(p.points[0].x);
        const int py = static_cast<int>(p.points[0].y);
        REQUIRE(px >= 0);
        REQUIRE(py >= 0);
        REQUIRE(px < s.pair.target_mask.width);
        REQUIRE(py < s.pair.target_mask.height);
        if (s.pair.target_mask.at(px, py)) ++hits;
    }
    // correspondence should localize the object in most scenes
    CHECK(hits >= trials * 2 / 3);
}

TEST_CASE("multi-point prompts emit stratified canonical points") {
    SceneConfig scfg;
    scfg.seed = 3;
    const PairSample s = prepare_sample(generate_pair(scfg));
    AnchorConfig cfg;
    cfg.n_points = 5;
    const AnchorPrompt p = generate_anchor_prompt(s.feat_qa, s.feat_ta, s.pair.query_mask, cfg);
    CHECK(p.points.size() >= 1);
    CHECK(p.points.size() <= 5);
    CHECK(p.points.size() == p.labels.size());
    // stratification guarantees pairwise separation above min_dist patches
    for (std::size_t i = 0; i < p.points.size(); ++i) {
        for (std::size_t j = i + 1; j < p.points.size(); ++j) {
            const double dx = (p.points[i].x - p.points[j].x) / s.feat_qa.patch_size;
            const double dy = (p.points[i].y - p.points[j].y) / s.feat_qa.patch_size;
            CHECK(std::sqrt(dx * dx + dy * dy) > cfg.min_dist);
        }
    }

    const Mask empty(64, 64);
    CHECK_THROWS_AS(generate_anchor_prompt(s.feat_qa, s.feat_ta, empty, cfg),
                    std::invalid_argument);
}
