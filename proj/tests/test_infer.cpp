#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>

#include "s2r/infer.hpp"

using namespace s2r;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("s2r_infer_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

SceneSpec tiny_spec(std::uint64_t seed, int T = 5) {
    SceneSpec s;
    s.seed = seed;
    s.T = T;
    s.H = s.W = 64;
    s.num_objects = 2;
    return s;
}

PipelineConfig tiny_pcfg() {
    PipelineConfig pcfg;
    pcfg.vfm_channels = 16;
    pcfg.S = 1;
    pcfg.dit.depth = 4;
    pcfg.dit.width = 16;
    pcfg.dit.heads = 4;
    pcfg.dit.time_dim = 16;
    pcfg.aligner.hidden = 8;
    pcfg.aligner.out_channels = 16;
    pcfg.control.N = 2;
    return pcfg;
}

// basis fitted on two tiny clips; enough structure for mask tests
PCABasis tiny_basis(const std::string& dir) {
    auto backend = make_toy_vfm(16);
    IncrementalPCA pca(16, 8, 64);
    for (std::uint64_t s = 0; s < 2; ++s)
        pca.push_grid(extract_features(generate_clip(tiny_spec(s)).real, *backend, 1));
    PCABasis basis = stabilize_signs(pca.finalize());
    save_basis(basis, dir + "/basis.pcab");
    return basis;
}

Pipeline tiny_pipeline(const std::string& dir, int chunk_T = 5, std::uint64_t seed = 11) {
    PCABasis basis = tiny_basis(dir);
    return build_pipeline(tiny_pcfg(), 64, 64, chunk_T, seed, &basis, nullptr);
}

std::vector<std::int64_t> stage_dims(const std::vector<StageShape>& stages,
                                     const std::string& name) {
    for (const auto& s : stages)
        if (s.name == name) return s.dims;
    FAIL("no stage named ", name);
    return {};
}

}  // namespace

TEST_SUITE_BEGIN("infer");

TEST_CASE("dry_run_shapes reproduces the full-scale pipeline dimensions") {
    ShapeQuery q;  // defaults mirror the reference configuration
    q.k_m = 32;
    auto stages = dry_run_shapes(q);
    REQUIRE(stages.size() == 6);

    CHECK(stage_dims(stages, "V") == std::vector<std::int64_t>{93, 704, 1280, 3});
    CHECK(stage_dims(stages, "features Z_c") == std::vector<std::int64_t>{93, 176, 320, 64});
    CHECK(stage_dims(stages, "projected") == std::vector<std::int64_t>{93, 176, 320, 32});
    CHECK(stage_dims(stages, "aligned") == std::vector<std::int64_t>{93, 44, 80, 64});
    CHECK(stage_dims(stages, "condition") == std::vector<std::int64_t>{24, 44, 80, 64});
    CHECK(stage_dims(stages, "z latent") == std::vector<std::int64_t>{24, 44, 80, 3072});

    std::string text = format_shapes(stages);
    CHECK(text.find("V [93,704,1280,3]") != std::string::npos);
    CHECK(text.find("condition [24,44,80,64]") != std::string::npos);
    CHECK(text.find("z latent [24,44,80,3072]") != std::string::npos);

    // desk-scale variant used by the unit stack
    ShapeQuery d;
    d.T = 17;
    d.H = d.W = 64;
    d.S = 1;
    d.vfm_channels = 16;
    d.k_m = 8;
    d.aligner_hidden = 8;
    d.cond_dim = 16;
    auto desk = dry_run_shapes(d);
    CHECK(stage_dims(desk, "features Z_c") == std::vector<std::int64_t>{17, 4, 4, 16});
    CHECK(stage_dims(desk, "projected") == std::vector<std::int64_t>{17, 4, 4, 8});
    CHECK(stage_dims(desk, "aligned") == std::vector<std::int64_t>{17, 4, 4, 8});
    CHECK(stage_dims(desk, "condition") == std::vector<std::int64_t>{5, 4, 4, 16});
    CHECK(stage_dims(desk, "z latent") == std::vector<std::int64_t>{5, 4, 4, 3072});
}

TEST_CASE("dry_run_shapes rejects inconsistent geometry with named constraints") {
    ShapeQuery q;
    q.T = 92;
    CHECK_THROWS_WITH_AS(dry_run_shapes(q), doctest::Contains("T ≡ 1 mod 4 required, got T=92"),
                         ConfigError);

    q = ShapeQuery{};
    q.H = 100;
    CHECK_THROWS_AS(dry_run_shapes(q), ConfigError);

    q = ShapeQuery{};
    q.S = 3;
    CHECK_THROWS_WITH_AS(dry_run_shapes(q), doctest::Contains("S must be 1, 2, or 4"),
                         ConfigError);

    q = ShapeQuery{};
    q.k_m = 65;  // exceeds the 64 feature channels
    CHECK_THROWS_AS(dry_run_shapes(q), ConfigError);

    q = ShapeQuery{};
    q.aligner_hidden = 12;  // group norm needs a multiple of 8
    CHECK_THROWS_AS(dry_run_shapes(q), ConfigError);

    q = ShapeQuery{};
    q.temporal_ratio = 2;
    CHECK_THROWS_AS(dry_run_shapes(q), ConfigError);
}

TEST_CASE("translate is deterministic in the seed and stays in range") {
    const std::string dir = scratch("translate_det");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(42)).sim;

    VideoClip a = translate(p, sim, 4, 6, 99);
    VideoClip b = translate(p, sim, 4, 6, 99);
    REQUIRE(a.T == sim.T);
    REQUIRE(a.H == sim.H);
    REQUIRE(a.W == sim.W);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);

    VideoClip c = translate(p, sim, 4, 6, 100);
    CHECK(std::memcmp(a.data.data(), c.data.data(), a.data.size() * sizeof(float)) != 0);

    for (float v : a.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("translate validates k and the clip geometry") {
    const std::string dir = scratch("translate_errors");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(42)).sim;

    CHECK_THROWS_WITH_AS(translate(p, sim, 0, 6, 1), doctest::Contains("[1, 8]"), ConfigError);
    CHECK_THROWS_WITH_AS(translate(p, sim, 99, 6, 1), doctest::Contains("[1, 8]"), ConfigError);

    VideoClip wrong = generate_clip(tiny_spec(42, 9)).sim;  // 9 frames, window wants 5
    CHECK_THROWS_WITH_AS(translate(p, wrong, 4, 6, 1), doctest::Contains("expects"), DataError);

    Pipeline bare = build_pipeline(tiny_pcfg(), 64, 64, 5, 11, nullptr, nullptr);
    CHECK_THROWS_AS(translate(bare, sim, 4, 6, 1), ConfigError);
}

TEST_CASE("a fixed mask matches a singleton tail-drop draw") {
    const std::string dir = scratch("mask_paths");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(3)).sim;

    TailDropPolicy singleton;
    singleton.candidates = {8};
    Rng rng(5);
    ChannelMask drawn = sample_tail_drop(singleton, rng);
    ChannelMask fixed = make_channel_mask(8, 8);
    REQUIRE(drawn.k == fixed.k);
    REQUIRE(drawn.bits == fixed.bits);

    FeatureGrid feat = condition_features(p, sim);
    FeatureGrid via_drawn = apply_mask(feat, drawn);
    FeatureGrid via_fixed = apply_mask(feat, fixed);
    CHECK(via_drawn.data == via_fixed.data);
}

TEST_CASE("channel masks nest: growing k only adds channels") {
    const std::string dir = scratch("mask_nesting");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(3)).sim;

    FeatureGrid feat = condition_features(p, sim);
    FeatureGrid m2 = apply_mask(feat, make_channel_mask(2, 8));
    FeatureGrid m8 = apply_mask(feat, make_channel_mask(8, 8));
    REQUIRE(m2.C == 8);
    REQUIRE(m8.C == 8);

    double tail_energy = 0.0;
    for (int t = 0; t < feat.T; ++t)
        for (int y = 0; y < feat.h; ++y)
            for (int x = 0; x < feat.w; ++x)
                for (int c = 0; c < 8; ++c) {
                    if (c < 2)
                        CHECK(m2.at(t, y, x, c) == m8.at(t, y, x, c));
                    else
                        CHECK(m2.at(t, y, x, c) == 0.0f);
                    if (c >= 2) tail_energy += std::abs(m8.at(t, y, x, c));
                }
    CHECK(tail_energy > 0.0);  // the wider mask genuinely carries more signal
}

TEST_CASE("translate_long with a single window matches translate bitwise") {
    const std::string dir = scratch("long_single");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(7)).sim;

    VideoClip whole = translate(p, sim, 4, 6, 21);
    VideoClip chunked = translate_long(p, sim, 5, 4, 6, 21);
    REQUIRE(chunked.T == whole.T);
    CHECK(std::memcmp(whole.data.data(), chunked.data.data(),
                      whole.data.size() * sizeof(float)) == 0);
}

TEST_CASE("translate_long falls back to translate when the chunk exceeds the clip") {
    const std::string dir = scratch("long_fallback");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(7)).sim;

    VideoClip whole = translate(p, sim, 4, 6, 21);
    VideoClip chunked = translate_long(p, sim, 9, 4, 6, 21);
    CHECK(std::memcmp(whole.data.data(), chunked.data.data(),
                      whole.data.size() * sizeof(float)) == 0);
}

TEST_CASE("translate_long stitches overlapping windows with latent carry-over") {
    const std::string dir = scratch("long_stitch");
    Pipeline p = tiny_pipeline(dir);
    VideoClip sim = generate_clip(tiny_spec(9, 13)).sim;  // 13 frames, 3 windows of 5

    const int k = 4, steps = 6;
    const std::uint64_t seed = 77;
    VideoClip out = translate_long(p, sim, 5, k, steps, seed);
    REQUIRE(out.T == 13);
    REQUIRE(out.H == 64);
    REQUIRE(out.W == 64);

    VideoClip again = translate_long(p, sim, 5, k, steps, seed);
    CHECK(std::memcmp(out.data.data(), again.data.data(), out.data.size() * sizeof(float)) == 0);

    // re-derive the whole schedule by hand: window i covers input frames
    // [4i, 4i+5) and reseeds as hash(hash(seed) ^ hash(i)); from the second
    // window on, the opening latent frame is replaced by the previous
    // window's closing one before decoding
    auto window = [&](int start) {
        VideoClip w(5, sim.H, sim.W);
        std::memcpy(w.data.data(), sim.frame(start), w.data.size() * sizeof(float));
        return w;
    };
    auto clamp01 = [](VideoClip v) {
        for (auto& x : v.data) x = std::clamp(x, 0.0f, 1.0f);
        return v;
    };

    VideoClip manual(13, sim.H, sim.W);
    LatentGrid prev;
    std::vector<VideoClip> decoded;
    for (int i = 0; i < 3; ++i) {
        std::uint64_t ws = i == 0 ? seed : hash_u64(hash_u64(seed) ^ hash_u64(i));
        LatentGrid lat = generate_latent(p, window(4 * i), k, steps, ws);
        if (i > 0) {
            const std::int64_t fsz = static_cast<std::int64_t>(lat.h) * lat.w * lat.D_z;
            std::memcpy(lat.data.ptr(), prev.data.ptr() + (prev.T_lat - 1) * fsz,
                        static_cast<std::size_t>(fsz) * sizeof(double));
        }
        VideoClip d = clamp01(decode_latent(lat));
        std::memcpy(manual.frame(4 * i), d.data.data(), d.data.size() * sizeof(float));
        decoded.push_back(std::move(d));
        prev = std::move(lat);
    }
    CHECK(std::memcmp(out.data.data(), manual.data.data(), out.data.size() * sizeof(float)) == 0);

    // the shared frame belongs to the newer window, and carry-over makes it
    // differ from what the older window generated there
    const std::size_t fbytes = static_cast<std::size_t>(64) * 64 * 3 * sizeof(float);
    CHECK(std::memcmp(out.frame(4), decoded[1].frame(0), fbytes) == 0);
    CHECK(std::memcmp(out.frame(4), decoded[0].frame(4), fbytes) != 0);

    // frame counts that do not split into overlap-one windows are rejected
    VideoClip off = generate_clip(tiny_spec(9, 12)).sim;
    CHECK_THROWS_WITH_AS(translate_long(p, off, 5, k, steps, seed),
                         doctest::Contains("pad or crop"), DataError);
}

TEST_SUITE_END();
