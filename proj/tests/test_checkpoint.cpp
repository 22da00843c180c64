#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "v2lab/checkpoint.hpp"

using namespace v2lab;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Checkpoint make_checkpoint(std::uint64_t seed) {
    Rng rng(seed);
    Checkpoint ck;
    ck.config_hash = 0xabcdef;
    ck.visual_backend_seed = visual_encoder_settings().seed;
    ck.anchor_backend_seed = anchor_encoder_settings().seed;

    DecoderConfig dcfg;
    dcfg.dim = 8;
    dcfg.feat_dim = 8;
    dcfg.n_blocks = 1;
    dcfg.head_mid = 4;

    SavedExpert anchor;
    anchor.expert = make_anchor_expert(init_decoder(dcfg, rng));
    anchor.steps_done = 0;
    ck.upsert(std::move(anchor));

    SavedExpert visual;
    visual.expert.kind = ExpertKind::Visual;
    visual.expert.decoder = init_decoder(dcfg, rng);
    visual.expert.matcher = init_vpmatcher(VPMatcherConfig{8}, rng);
    visual.steps_done = 123;
    ck.upsert(std::move(visual));
    return ck;
}

void check_params_equal(std::vector<std::pair<std::string, nn::Var>> a,
                        std::vector<std::pair<std::string, nn::Var>> b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second.value() == b[i].second.value());  // byte-exact float64
    }
}

}  // namespace

TEST_CASE("find and upsert manage one entry per kind") {
    Checkpoint ck = make_checkpoint(1);
    REQUIRE(ck.find(ExpertKind::Anchor) != nullptr);
    REQUIRE(ck.find(ExpertKind::Visual) != nullptr);
    CHECK(ck.find(ExpertKind::Fusion) == nullptr);
    CHECK(ck.experts.size() == 2);

    // upsert replaces in place
    SavedExpert again;
    again.expert = ck.find(ExpertKind::Visual)->expert;
    again.steps_done = 999;
    ck.upsert(std::move(again));
    CHECK(ck.experts.size() == 2);
    CHECK(ck.find(ExpertKind::Visual)->steps_done == 999);
}

TEST_CASE("checkpoint round trip restores everything bit-exactly") {
    const Checkpoint ck = make_checkpoint(2);
    const std::string path = temp_path("v2lab_ck_roundtrip.bin");
    save_checkpoint(ck, path);

    CheckpointLoadResult res = load_checkpoint(path, ck.config_hash);
    CHECK_FALSE(res.config_hash_mismatch);
    Checkpoint& back = res.checkpoint;
    CHECK(back.config_hash == ck.config_hash);
    CHECK(back.visual_backend_seed == ck.visual_backend_seed);
    CHECK(back.anchor_backend_seed == ck.anchor_backend_seed);
    REQUIRE(back.experts.size() == ck.experts.size());

    for (const SavedExpert& orig : ck.experts) {
        SavedExpert* got = back.find(orig.expert.kind);
        REQUIRE(got != nullptr);
        CHECK(got->steps_done == orig.steps_done);
        check_params_equal(got->expert.decoder.named_params(),
                           const_cast<Expert&>(orig.expert).decoder.named_params());
        CHECK(got->expert.matcher.has_value() == orig.expert.matcher.has_value());
        if (orig.expert.matcher.has_value()) {
            check_params_equal(got->expert.matcher->named_params(),
                               const_cast<Expert&>(orig.expert).matcher->named_params());
        }
    }

    // saving the loaded checkpoint reproduces the same bytes
    const std::string path2 = temp_path("v2lab_ck_roundtrip2.bin");
    save_checkpoint(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("config hash mismatch is reported but not fatal") {
    const Checkpoint ck = make_checkpoint(3);
    const std::string path = temp_path("v2lab_ck_hash.bin");
    save_checkpoint(ck, path);

    CHECK(load_checkpoint(path, ck.config_hash + 1).config_hash_mismatch);
    CHECK_FALSE(load_checkpoint(path, 0).config_hash_mismatch);  // 0 skips the check
    std::filesystem::remove(path);
}

TEST_CASE("corrupted files fail with the offending section named") {
    const Checkpoint ck = make_checkpoint(4);
    const std::string path = temp_path("v2lab_ck_corrupt.bin");

    save_checkpoint(ck, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

    save_checkpoint(ck, path);
    std::filesystem::resize_file(path, 3);  // not even a magic
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);

    save_checkpoint(ck, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');  // break the magic bytes
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);

    save_checkpoint(ck, path);
    {
        // bump the version field just after the 4-byte magic
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(static_cast<char>(9));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), std::runtime_error);

    save_checkpoint(ck, path);
    {
        // append junk after the trailer
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f.put('Z');
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_checkpoint(temp_path("v2lab_ck_missing.bin")), std::runtime_error);
}

TEST_CASE("a loaded expert predicts identically to the saved one") {
    Rng rng(5);
    Checkpoint ck;
    ck.config_hash = 1;
    ck.visual_backend_seed = visual_encoder_settings().seed;
    ck.anchor_backend_seed = anchor_encoder_settings().seed;
    SavedExpert anchor;
    anchor.expert = make_anchor_expert(init_decoder(DecoderConfig{}, rng));
    ck.upsert(std::move(anchor));

    SceneConfig scfg;
    scfg.seed = 8;
    const PairSample s = prepare_sample(generate_pair(scfg));
    AnchorConfig acfg;
    const Mask before = predict_mask(ck.find(ExpertKind::Anchor)->expert, s, acfg);

    const std::string path = temp_path("v2lab_ck_predict.bin");
    save_checkpoint(ck, path);
    Checkpoint back = load_checkpoint(path).checkpoint;
    const Mask after = predict_mask(back.find(ExpertKind::Anchor)->expert, s, acfg);
    CHECK(before == after);
    std::filesystem::remove(path);
}
