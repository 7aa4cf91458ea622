#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "fd_check.hpp"
#include "s2r/aligner.hpp"

using namespace s2r;

namespace {

Tensor random_grid(int T, int h, int w, int C, Rng& rng, double scale = 1.0) {
    return Tensor::randn({T, h, w, C}, rng, scale);
}

// max |a-b| over the [h,w,D] slice of output frame tau
double frame_diff(const Tensor& a, const Tensor& b, int tau) {
    const std::int64_t sz = a.shape[1] * a.shape[2] * a.shape[3];
    double m = 0.0;
    for (std::int64_t i = tau * sz; i < (tau + 1) * sz; ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

void randomize_params(ParamStore& store, Rng& rng, double scale) {
    for (auto& p : store.all()) {
        Tensor n = Tensor::randn(p->val.shape, rng, scale);
        for (std::int64_t i = 0; i < p->val.numel(); ++i) p->val[i] += n[i];
    }
}

}  // namespace

TEST_SUITE("aligner") {

TEST_CASE("receptive field: closed form endpoints") {
    AlignerConfig cfg;
    cfg.temporal_ratio = 4;
    cfg.temporal_kernel = 5;
    CHECK(causal_receptive_field(cfg, 0).second == 0);
    CHECK(causal_receptive_field(cfg, 0).first == 0);
    CHECK(causal_receptive_field(cfg, 1).second == 4);
    for (int tau = 0; tau < 30; ++tau) {
        auto rf = causal_receptive_field(cfg, tau);
        CHECK(rf.second == tau * cfg.temporal_ratio);  // causality law
        CHECK(rf.first >= 0);
        CHECK(rf.first <= rf.second);
    }
}

TEST_CASE("receptive field: empirical perturbation probe") {
    struct Probe {
        int r, k, T;
    };
    for (Probe pr : {Probe{4, 5, 17}, Probe{2, 3, 9}, Probe{1, 2, 7}}) {
        CAPTURE(pr.r);
        AlignerConfig cfg;
        cfg.S = 1;
        cfg.in_channels = 4;
        cfg.hidden = 8;
        cfg.out_channels = 4;
        cfg.temporal_ratio = pr.r;
        cfg.temporal_kernel = pr.k;

        ParamStore store;
        Rng rng(404 + pr.r);
        Aligner al(cfg, store, rng);
        randomize_params(store, rng, 0.2);  // make the zero-init projection live

        const int h = 8, w = 8;
        Tensor base = random_grid(pr.T, h, w, cfg.in_channels, rng);
        Tensor out0 = al.forward(ad::constant(base))->val;
        const int T_lat = static_cast<int>(out0.shape[0]);

        // changed[tau][f] = whether perturbing input frame f moved output tau
        std::vector<std::vector<bool>> changed(T_lat, std::vector<bool>(pr.T, false));
        for (int f = 0; f < pr.T; ++f) {
            Tensor pert = base;
            const std::int64_t fsz = static_cast<std::int64_t>(h) * w * cfg.in_channels;
            for (std::int64_t i = 0; i < fsz; ++i) pert.data[f * fsz + i] += rng.normal() * 0.4;
            Tensor out1 = al.forward(ad::constant(pert))->val;
            for (int tau = 0; tau < T_lat; ++tau) {
                const double d = frame_diff(out0, out1, tau);
                auto rf = causal_receptive_field(cfg, tau);
                if (f < rf.first || f > rf.second)
                    CHECK(d == 0.0);  // exactly zero outside the analytic window
                changed[tau][f] = d > 0.0;
            }
        }
        for (int tau = 0; tau < T_lat; ++tau) {
            auto rf = causal_receptive_field(cfg, tau);
            CHECK(changed[tau][rf.second]);  // last frame of the window really reaches tau
            CHECK(changed[tau][rf.first]);
        }
    }
}

TEST_CASE("shape law over valid configs") {
    struct Case {
        int S, T, hs, ws, r, k;
    };
    for (Case c : {Case{4, 17, 32, 48, 4, 5}, Case{2, 9, 16, 16, 2, 3}, Case{1, 5, 8, 12, 4, 4},
                   Case{4, 1, 16, 16, 4, 5}, Case{2, 13, 32, 16, 3, 5}}) {
        CAPTURE(c.S);
        CAPTURE(c.T);
        AlignerConfig cfg;
        cfg.S = c.S;
        cfg.in_channels = 3;
        cfg.hidden = 8;
        cfg.out_channels = 6;
        cfg.temporal_ratio = c.r;
        cfg.temporal_kernel = c.k;
        ParamStore store;
        Rng rng(7);
        Aligner al(cfg, store, rng);
        Tensor in = random_grid(c.T, c.hs, c.ws, 3, rng);
        Tensor out = al.forward(ad::constant(in))->val;
        REQUIRE(out.shape.size() == 4);
        CHECK(out.shape[0] == 1 + (c.T - 1) / c.r);
        CHECK(out.shape[1] == c.hs / c.S);
        CHECK(out.shape[2] == c.ws / c.S);
        CHECK(out.shape[3] == 6);
        CHECK(al.spatial_stages() == (c.S == 4 ? 2 : 1));
    }

    // 16 frames of a 16x16 grid at S=4 land on a 4x4 grid (temporal ratio 1)
    AlignerConfig cfg;
    cfg.S = 4;
    cfg.in_channels = 32;
    cfg.hidden = 16;
    cfg.out_channels = 8;
    cfg.temporal_ratio = 1;
    cfg.temporal_kernel = 1;
    ParamStore store;
    Rng rng(8);
    Aligner al(cfg, store, rng);
    Tensor out = al.forward(ad::constant(random_grid(16, 16, 16, 32, rng)))->val;
    CHECK(out.shape == std::vector<std::int64_t>{16, 4, 4, 8});
}

TEST_CASE("zero-initialized projection mutes the condition") {
    AlignerConfig cfg;
    cfg.S = 2;
    cfg.in_channels = 5;
    cfg.hidden = 8;
    cfg.out_channels = 7;
    ParamStore store;
    Rng rng(11);
    Aligner al(cfg, store, rng);

    Tensor out = al.forward(ad::constant(random_grid(9, 16, 16, 5, rng)))->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.data[i] == 0.0);

    // with a live projection, zero input still maps to zero (all biases start at zero)
    randomize_params(store, rng, 0.3);
    ParamStore store2;
    Rng rng2(12);
    Aligner al2(cfg, store2, rng2);
    Tensor pw = Tensor::randn(store2.find("aligner.proj.w")->val.shape, rng2, 0.5);
    store2.find("aligner.proj.w")->val = pw;
    Tensor zout = al2.forward(ad::constant(Tensor({9, 16, 16, 5})))->val;
    for (std::int64_t i = 0; i < zout.numel(); ++i) CHECK(zout.data[i] == 0.0);
}

TEST_CASE("constant-in-time input stays constant past warm-up") {
    AlignerConfig cfg;
    cfg.S = 2;
    cfg.in_channels = 4;
    cfg.hidden = 8;
    cfg.out_channels = 6;
    cfg.temporal_ratio = 4;
    cfg.temporal_kernel = 5;
    ParamStore store;
    Rng rng(21);
    Aligner al(cfg, store, rng);

    // averaging kernel in the strided block, identity second block, live projection
    ad::Var w0 = store.find("aligner.temporal.0.w");
    for (std::int64_t i = 0; i < w0->val.numel(); ++i) w0->val[i] = 0.0;
    for (int f = 0; f < cfg.hidden; ++f)
        for (int k = 0; k < cfg.temporal_kernel; ++k)
            w0->val[(static_cast<std::int64_t>(f) * cfg.hidden + f) * cfg.temporal_kernel + k] =
                1.0 / cfg.temporal_kernel;
    ad::Var w1 = store.find("aligner.temporal.1.w");
    for (std::int64_t i = 0; i < w1->val.numel(); ++i) w1->val[i] = 0.0;
    store.find("aligner.proj.w")->val =
        Tensor::randn(store.find("aligner.proj.w")->val.shape, rng, 0.5);

    const int T = 33, h = 8, w = 8;
    Tensor frame = Tensor::randn({1, h, w, cfg.in_channels}, rng);
    Tensor clip({T, h, w, cfg.in_channels});
    for (int t = 0; t < T; ++t)
        std::memcpy(clip.data.data() + static_cast<std::size_t>(t) * frame.numel(),
                    frame.data.data(), sizeof(double) * static_cast<std::size_t>(frame.numel()));

    Tensor out = al.forward(ad::constant(clip))->val;
    const int T_lat = static_cast<int>(out.shape[0]);
    REQUIRE(T_lat == 9);
    for (int tau = 2; tau < T_lat; ++tau) CHECK(frame_diff(out, out, tau) == 0.0);
    for (int tau = 2; tau < T_lat; ++tau) {
        const std::int64_t sz = out.shape[1] * out.shape[2] * out.shape[3];
        double m = 0.0;
        for (std::int64_t i = 0; i < sz; ++i)
            m = std::max(m, std::fabs(out.data[tau * sz + i] - out.data[2 * sz + i]));
        CHECK(m == 0.0);
    }
}

TEST_CASE("frame purity when temporal mixing is off") {
    AlignerConfig cfg;
    cfg.S = 2;
    cfg.in_channels = 4;
    cfg.hidden = 8;
    cfg.out_channels = 5;
    cfg.temporal_ratio = 1;
    cfg.temporal_kernel = 1;
    ParamStore store;
    Rng rng(31);
    Aligner al(cfg, store, rng);
    randomize_params(store, rng, 0.2);

    Tensor base = random_grid(6, 16, 16, 4, rng);
    Tensor out0 = al.forward(ad::constant(base))->val;
    const int zap = 3;
    Tensor mod = base;
    const std::int64_t fsz = 16 * 16 * 4;
    for (std::int64_t i = 0; i < fsz; ++i) mod.data[zap * fsz + i] = 0.0;
    Tensor out1 = al.forward(ad::constant(mod))->val;
    for (int t = 0; t < 6; ++t) {
        if (t == zap)
            CHECK(frame_diff(out0, out1, t) > 0.0);
        else
            CHECK(frame_diff(out0, out1, t) == 0.0);
    }
}

TEST_CASE("input and config validation") {
    AlignerConfig cfg;
    cfg.S = 2;
    cfg.in_channels = 4;
    cfg.hidden = 8;
    cfg.out_channels = 5;
    cfg.temporal_ratio = 4;
    cfg.temporal_kernel = 5;
    ParamStore store;
    Rng rng(41);
    Aligner al(cfg, store, rng);

    // 18 frames cannot be grouped as 1 + 4k: the message should point at a fix
    CHECK_THROWS_WITH_AS(al.forward(ad::constant(Tensor({18, 16, 16, 4}))),
                         doctest::Contains("pad or crop"), DataError);
    CHECK_THROWS_AS(al.forward(ad::constant(Tensor({9, 15, 16, 4}))), DataError);
    CHECK_THROWS_AS(al.forward(ad::constant(Tensor({9, 16, 16, 3}))), DataError);
    CHECK_THROWS_AS(al.forward(ad::constant(Tensor({16, 16, 4}))), DataError);

    AlignerConfig bad = cfg;
    bad.S = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.hidden = 12;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.temporal_kernel = 3;  // < temporal_ratio
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.temporal_ratio = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("gradients match finite differences") {
    AlignerConfig cfg;
    cfg.S = 4;
    cfg.in_channels = 3;
    cfg.hidden = 8;
    cfg.out_channels = 4;
    cfg.temporal_ratio = 4;
    cfg.temporal_kernel = 5;
    ParamStore store;
    Rng rng(51);
    Aligner al(cfg, store, rng);
    randomize_params(store, rng, 0.1);

    Tensor in = random_grid(5, 16, 16, 3, rng, 0.7);
    auto build_loss = [&]() {
        ad::Var out = al.forward(ad::constant(in));
        return ad::mean_all(ad::mul(out, out));
    };
    auto rep = s2r::testing::fd_check(build_loss, store.all(), rng, 2, 1e-5);
    CHECK(rep.checked == 2 * static_cast<int>(store.all().size()));
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("deterministic construction and run()") {
    AlignerConfig cfg;
    cfg.S = 2;
    cfg.in_channels = 4;
    cfg.hidden = 8;
    cfg.out_channels = 5;
    cfg.temporal_ratio = 2;
    cfg.temporal_kernel = 3;

    FeatureGrid g(5, 16, 16, 4);
    Rng fill(61);
    for (auto& v : g.data) v = static_cast<float>(fill.normal());

    ParamStore s1, s2;
    Rng r1(99), r2(99);
    Aligner a1(cfg, s1, r1), a2(cfg, s2, r2);
    randomize_params(s1, r1, 0.2);
    randomize_params(s2, r2, 0.2);
    CHECK(s1.hash() == s2.hash());

    ConditionLatent c1 = a1.run(g), c2 = a2.run(g);
    CHECK(c1.data.data == c2.data.data);  // bitwise equal
    CHECK(c1.T_lat == 3);
    CHECK(c1.h == 8);
    CHECK(c1.w == 8);
    CHECK(c1.D == 5);

    Rng r3(5);
    Aligner a3(cfg, s1, r3, "other.");  // distinct prefix shares the store without clashes
    CHECK(s1.has("other.proj.w"));
    CHECK(s1.has("aligner.proj.w"));
}

}  // TEST_SUITE
