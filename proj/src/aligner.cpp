#include "s2r/aligner.hpp"

#include <algorithm>
#include <cmath>

#include "s2r/common.hpp"

namespace s2r {

using ad::Var;

void AlignerConfig::validate() const {
    if (S != 1 && S != 2 && S != 4)
        throw ConfigError("aligner: scale S must be 1, 2 or 4, got " + std::to_string(S));
    if (in_channels < 1) throw ConfigError("aligner: in_channels must be positive");
    if (hidden < 8 || hidden % 8 != 0)
        throw ConfigError("aligner: hidden must be a positive multiple of 8 (group norm), got " +
                          std::to_string(hidden));
    if (out_channels < 1) throw ConfigError("aligner: out_channels must be positive");
    if (temporal_ratio < 1) throw ConfigError("aligner: temporal_ratio must be >= 1");
    if (temporal_kernel < temporal_ratio)
        throw ConfigError("aligner: temporal_kernel must be >= temporal_ratio (got " +
                          std::to_string(temporal_kernel) + " < " + std::to_string(temporal_ratio) +
                          ")");
}

std::pair<int, int> causal_receptive_field(const AlignerConfig& cfg, int tau) {
    const int r = cfg.temporal_ratio;
    const int k = cfg.temporal_kernel;
    const int first_u = std::max(0, tau - k + 1);  // earliest block-1 output in the window
    const int first = std::max(0, first_u * r - (k - 1));
    return {first, tau * r};
}

Tensor grid_to_tensor(const FeatureGrid& grid) {
    Tensor t({grid.T, grid.h, grid.w, grid.C});
    for (std::size_t i = 0; i < grid.data.size(); ++i)
        t.data[i] = static_cast<double>(grid.data[i]);
    return t;
}

Aligner::Aligner(const AlignerConfig& cfg, ParamStore& params, Rng& rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();

    const int n_stages = cfg_.S == 1 ? 1 : static_cast<int>(std::lround(std::log2(cfg_.S)));
    int cin = cfg_.in_channels;
    for (int i = 0; i < n_stages; ++i) {
        const std::string base = prefix_ + "spatial." + std::to_string(i) + ".";
        SpatialStage st;
        st.down_w = params.add(base + "down.w", init_fanin({cfg_.hidden, cin, 3, 3}, rng));
        st.down_b = params.add(base + "down.b", Tensor({cfg_.hidden}));
        st.res.w1 = params.add(base + "res.w1", init_fanin({cfg_.hidden, cfg_.hidden, 3, 3}, rng));
        st.res.b1 = params.add(base + "res.b1", Tensor({cfg_.hidden}));
        st.res.gn1_g = params.add(base + "res.gn1.g", Tensor::full({cfg_.hidden}, 1.0));
        st.res.gn1_b = params.add(base + "res.gn1.b", Tensor({cfg_.hidden}));
        st.res.w2 = params.add(base + "res.w2", init_fanin({cfg_.hidden, cfg_.hidden, 3, 3}, rng));
        st.res.b2 = params.add(base + "res.b2", Tensor({cfg_.hidden}));
        stages_.push_back(st);
        cin = cfg_.hidden;
    }

    for (int i = 0; i < 2; ++i) {
        const std::string base = prefix_ + "temporal." + std::to_string(i) + ".";
        TemporalBlock tb;
        tb.stride = i == 0 ? cfg_.temporal_ratio : 1;
        tb.w = params.add(base + "w",
                          init_fanin({cfg_.hidden, cfg_.hidden, cfg_.temporal_kernel}, rng));
        tb.b = params.add(base + "b", Tensor({cfg_.hidden}));
        tb.gn_g = params.add(base + "gn.g", Tensor::full({cfg_.hidden}, 1.0));
        tb.gn_b = params.add(base + "gn.b", Tensor({cfg_.hidden}));
        temporal_.push_back(tb);
    }

    proj_w_ = params.add(prefix_ + "proj.w", Tensor({cfg_.out_channels, cfg_.hidden}));
    proj_b_ = params.add(prefix_ + "proj.b", Tensor({cfg_.out_channels}));
}

Var Aligner::forward(const Var& grid) const {
    const auto& sh = grid->val.shape;
    if (sh.size() != 4)
        throw DataError("aligner: expected a [T,h,w,C] grid, got rank " +
                        std::to_string(sh.size()));
    const int T = static_cast<int>(sh[0]);
    const int hs = static_cast<int>(sh[1]);
    const int ws = static_cast<int>(sh[2]);
    const int C = static_cast<int>(sh[3]);
    if (C != cfg_.in_channels)
        throw DataError("aligner: grid has " + std::to_string(C) + " channels, expected " +
                        std::to_string(cfg_.in_channels));
    if (hs % cfg_.S != 0 || ws % cfg_.S != 0)
        throw DataError("aligner: grid " + std::to_string(hs) + "x" + std::to_string(ws) +
                        " is not divisible by scale S=" + std::to_string(cfg_.S));
    if ((T - 1) % cfg_.temporal_ratio != 0)
        throw DataError("aligner: T=" + std::to_string(T) + " must satisfy T = 1 (mod " +
                        std::to_string(cfg_.temporal_ratio) +
                        "); pad or crop the clip to the nearest valid length");

    // frames as batch, channels first
    Var x = ad::permute(grid, {0, 3, 1, 2});

    const int stride = cfg_.S == 1 ? 1 : 2;
    for (const auto& st : stages_) {
        x = ad::conv2d(x, st.down_w, st.down_b, stride, 1);
        Var r = ad::conv2d(x, st.res.w1, st.res.b1, 1, 1);
        r = ad::group_norm_frames(r, 8, st.res.gn1_g, st.res.gn1_b);
        r = ad::silu(r);
        r = ad::conv2d(r, st.res.w2, st.res.b2, 1, 1);
        x = ad::add(x, r);
    }

    for (std::size_t i = 0; i < temporal_.size(); ++i) {
        const auto& tb = temporal_[i];
        Var y = ad::conv_temporal(x, tb.w, tb.b, tb.stride);
        y = ad::group_norm_frames(y, 8, tb.gn_g, tb.gn_b);
        y = ad::silu(y);
        x = tb.stride == 1 ? ad::add(x, y) : y;
    }

    const int T_lat = 1 + (T - 1) / cfg_.temporal_ratio;
    const int h = hs / cfg_.S, w = ws / cfg_.S;
    x = ad::permute(x, {0, 2, 3, 1});  // [T_lat, h, w, hidden]
    x = ad::reshape(x, {static_cast<std::int64_t>(T_lat) * h * w, cfg_.hidden});
    x = ad::linear(x, proj_w_, proj_b_);
    return ad::reshape(x, {T_lat, h, w, cfg_.out_channels});
}

ConditionLatent Aligner::run(const FeatureGrid& grid) const {
    Var out = forward(ad::constant(grid_to_tensor(grid)));
    ConditionLatent c;
    c.T_lat = static_cast<int>(out->val.shape[0]);
    c.h = static_cast<int>(out->val.shape[1]);
    c.w = static_cast<int>(out->val.shape[2]);
    c.D = static_cast<int>(out->val.shape[3]);
    c.data = out->val;
    return c;
}

}  // namespace s2r
