#include "s2r/dit.hpp"

#include <algorithm>
#include <cmath>

#include "s2r/common.hpp"

namespace s2r {

using ad::Var;

// ---------------- invertible latent transform ----------------

namespace {

// source pixel frame for (latent frame tt, group slot f); -1 = zero padding
inline int group_frame(int tt, int f) {
    if (tt == 0) return f == 0 ? 0 : -1;
    return 4 * tt - 3 + f;
}

}  // namespace

LatentGrid encode_latent(const VideoClip& clip) {
    if (clip.T < 1 || (clip.T - 1) % 4 != 0)
        throw DataError("latent transform: T=" + std::to_string(clip.T) +
                        " must satisfy T = 1 (mod 4)");
    if (clip.H % 16 != 0 || clip.W % 16 != 0)
        throw DataError("latent transform: frame size " + std::to_string(clip.H) + "x" +
                        std::to_string(clip.W) + " must be divisible by 16");
    LatentGrid z;
    z.T_lat = 1 + (clip.T - 1) / 4;
    z.h = clip.H / 16;
    z.w = clip.W / 16;
    z.data = Tensor({z.T_lat, z.h, z.w, z.D_z});
    double* out = z.data.data.data();
    for (int tt = 0; tt < z.T_lat; ++tt)
        for (int y = 0; y < z.h; ++y)
            for (int x = 0; x < z.w; ++x)
                for (int f = 0; f < 4; ++f) {
                    const int t = group_frame(tt, f);
                    if (t < 0) {
                        out += 16 * 16 * 3;
                        continue;
                    }
                    for (int py = 0; py < 16; ++py)
                        for (int px = 0; px < 16; ++px) {
                            const std::size_t o =
                                ((static_cast<std::size_t>(t) * clip.H + y * 16 + py) * clip.W +
                                 x * 16 + px) *
                                3;
                            *out++ = clip.data[o];
                            *out++ = clip.data[o + 1];
                            *out++ = clip.data[o + 2];
                        }
                }
    return z;
}

VideoClip decode_latent(const LatentGrid& z) {
    if (z.D_z != kLatentChannels)
        throw DataError("latent transform: expected " + std::to_string(kLatentChannels) +
                        " channels, got " + std::to_string(z.D_z));
    if (z.T_lat < 1 || z.h < 1 || z.w < 1 ||
        z.data.numel() != static_cast<std::int64_t>(z.T_lat) * z.h * z.w * z.D_z)
        throw DataError("latent transform: malformed latent grid");
    VideoClip clip(4 * (z.T_lat - 1) + 1, z.h * 16, z.w * 16);
    const double* in = z.data.data.data();
    for (int tt = 0; tt < z.T_lat; ++tt)
        for (int y = 0; y < z.h; ++y)
            for (int x = 0; x < z.w; ++x)
                for (int f = 0; f < 4; ++f) {
                    const int t = group_frame(tt, f);
                    if (t < 0) {
                        in += 16 * 16 * 3;
                        continue;
                    }
                    for (int py = 0; py < 16; ++py)
                        for (int px = 0; px < 16; ++px) {
                            float* p = &clip.at(t, y * 16 + py, x * 16 + px, 0);
                            p[0] = static_cast<float>(*in++);
                            p[1] = static_cast<float>(*in++);
                            p[2] = static_cast<float>(*in++);
                        }
                }
    return clip;
}

// ---------------- config / embeddings ----------------

void DiTConfig::validate() const {
    if (depth < 1) throw ConfigError("dit: depth must be >= 1");
    if (heads < 1 || width < heads || width % heads != 0)
        throw ConfigError("dit: width (" + std::to_string(width) +
                          ") must be a positive multiple of heads (" + std::to_string(heads) +
                          ")");
    if (time_dim < 2 || time_dim % 2 != 0)
        throw ConfigError("dit: time_dim must be an even number >= 2");
    if (t_lat < 1 || h < 1 || w < 1) throw ConfigError("dit: token grid dims must be positive");
    if (time_floor <= 0.0) throw ConfigError("dit: time_floor must be positive");
}

Tensor sinusoidal_time_embedding(double t, int dim) {
    Tensor e({1, dim});
    const int half = dim / 2;
    // t lives in [0,1]; stretch so the fastest feature still resolves small steps
    const double ts = t * 1000.0;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e[i] = std::sin(ts * freq);
        e[half + i] = std::cos(ts * freq);
    }
    return e;
}

namespace detail {

Var embed_tokens(const TokenEmbed& te, const Var& z_tokens, const DiTConfig& cfg) {
    Var h = ad::linear(z_tokens, te.in_w, te.in_b);
    h = ad::add_tile_rows(h, te.pos_spatial);
    h = ad::add_repeat_rows(h, te.pos_temporal);
    return h;
}

Var condition_vector(const TimeEmbed& te, double t, const DiTConfig& cfg) {
    Var e = ad::constant(sinusoidal_time_embedding(t, cfg.time_dim));
    Var c = ad::linear(e, te.w1, te.b1);
    c = ad::silu(c);
    c = ad::linear(c, te.w2, te.b2);
    return ad::add(c, te.null_emb);
}

namespace {

// multi-head attention over one factorized axis of the t-major token stream
Var attention(const Var& x, const DiTBlock& bp, const DiTConfig& cfg) {
    const int hw = cfg.h * cfg.w;
    const int dh = cfg.width / cfg.heads;
    const int B = bp.temporal ? hw : cfg.t_lat;  // batch axis
    const int S = bp.temporal ? cfg.t_lat : hw;  // attention axis

    auto heads_of = [&](const Var& m) {
        Var r = ad::reshape(m, {cfg.t_lat, hw, cfg.heads, dh});
        r = ad::permute(r, bp.temporal ? std::vector<int>{1, 2, 0, 3}
                                       : std::vector<int>{0, 2, 1, 3});
        return ad::reshape(r, {static_cast<std::int64_t>(B) * cfg.heads, S, dh});
    };
    Var q = heads_of(ad::linear(x, bp.wq, bp.bq));
    Var k = heads_of(ad::linear(x, bp.wk, bp.bk));
    Var v = heads_of(ad::linear(x, bp.wv, bp.bv));

    Var scores = ad::scale(ad::bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var out = ad::bmm_nn(ad::softmax_lastdim(scores), v);

    out = ad::reshape(out, {B, cfg.heads, S, dh});
    out = ad::permute(out, bp.temporal ? std::vector<int>{2, 0, 1, 3}
                                       : std::vector<int>{0, 2, 1, 3});
    out = ad::reshape(out, {static_cast<std::int64_t>(cfg.tokens()), cfg.width});
    return ad::linear(out, bp.wo, bp.bo);
}

}  // namespace

Var dit_block_forward(const Var& x, const Var& c, const DiTBlock& bp, const DiTConfig& cfg) {
    Var mod = ad::linear(ad::silu(c), bp.mod_w, bp.mod_b);  // [1, 6*width]
    auto part = [&](int j) { return ad::slice_cols(mod, j * cfg.width, cfg.width); };

    Var n = ad::layer_norm_rows(x);
    n = ad::add_row(ad::mul_row(n, ad::add_const(part(1), 1.0)), part(0));
    Var h = ad::add(x, ad::mul_row(attention(n, bp, cfg), part(2)));

    n = ad::layer_norm_rows(h);
    n = ad::add_row(ad::mul_row(n, ad::add_const(part(4), 1.0)), part(3));
    Var m = ad::linear(n, bp.w1, bp.b1);
    m = ad::silu(m);
    m = ad::linear(m, bp.w2, bp.b2);
    return ad::add(h, ad::mul_row(m, part(5)));
}

}  // namespace detail

// ---------------- model ----------------

Var inject(const Var& hidden, const std::vector<ad::Var>& residuals, int block_index, int N) {
    if ((block_index + 1) % N != 0) return hidden;
    const std::size_t j = static_cast<std::size_t>((block_index + 1) / N - 1);
    if (j >= residuals.size())
        throw DataError("control injection: no residual for block " +
                        std::to_string(block_index + 1) + " (have " +
                        std::to_string(residuals.size()) + ")");
    return ad::add(hidden, residuals[j]);
}

DiT::DiT(const DiTConfig& cfg, ParamStore& params, Rng& rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
    const int W = cfg_.width;

    embed_.in_w = params.add(prefix_ + "in.w", init_fanin({W, kLatentChannels}, rng));
    embed_.in_b = params.add(prefix_ + "in.b", Tensor({W}));
    embed_.pos_spatial =
        params.add(prefix_ + "pos.spatial", init_normal({cfg_.h * cfg_.w, W}, rng, 0.02));
    embed_.pos_temporal =
        params.add(prefix_ + "pos.temporal", init_normal({cfg_.t_lat, W}, rng, 0.02));

    time_.w1 = params.add(prefix_ + "time.w1", init_fanin({W, cfg_.time_dim}, rng));
    time_.b1 = params.add(prefix_ + "time.b1", Tensor({W}));
    time_.w2 = params.add(prefix_ + "time.w2", init_fanin({W, W}, rng));
    time_.b2 = params.add(prefix_ + "time.b2", Tensor({W}));
    time_.null_emb = params.add(prefix_ + "null", init_normal({1, W}, rng, 0.02));

    for (int i = 0; i < cfg_.depth; ++i) {
        const std::string base = prefix_ + "block" + std::to_string(i) + ".";
        detail::DiTBlock b;
        b.temporal = i % 2 == 1;  // alternate: spatial, temporal, spatial, ...
        b.mod_w = params.add(base + "mod.w", Tensor({6 * W, W}));
        b.mod_b = params.add(base + "mod.b", Tensor({6 * W}));
        b.wq = params.add(base + "attn.wq", init_fanin({W, W}, rng));
        b.bq = params.add(base + "attn.bq", Tensor({W}));
        b.wk = params.add(base + "attn.wk", init_fanin({W, W}, rng));
        b.bk = params.add(base + "attn.bk", Tensor({W}));
        b.wv = params.add(base + "attn.wv", init_fanin({W, W}, rng));
        b.bv = params.add(base + "attn.bv", Tensor({W}));
        b.wo = params.add(base + "attn.wo", init_fanin({W, W}, rng));
        b.bo = params.add(base + "attn.bo", Tensor({W}));
        b.w1 = params.add(base + "mlp.w1", init_fanin({4 * W, W}, rng));
        b.b1 = params.add(base + "mlp.b1", Tensor({4 * W}));
        b.w2 = params.add(base + "mlp.w2", init_fanin({W, 4 * W}, rng));
        b.b2 = params.add(base + "mlp.b2", Tensor({W}));
        blocks_.push_back(b);
    }

    head_w_ = params.add(prefix_ + "head.w", init_normal({kLatentChannels, W}, rng, 0.02));
    head_b_ = params.add(prefix_ + "head.b", Tensor({kLatentChannels}));
    head_alpha_ = params.add(prefix_ + "head.alpha", Tensor::full({1}, 1.0));
}

Var DiT::forward(const Var& z_tokens, double t, const ResidualProvider* provider) const {
    const auto& sh = z_tokens->val.shape;
    if (sh.size() != 2 || sh[0] != cfg_.tokens() || sh[1] != kLatentChannels)
        throw DataError("dit: expected tokens [" + std::to_string(cfg_.tokens()) + "," +
                        std::to_string(kLatentChannels) + "], got " + z_tokens->val.shape_str());

    std::vector<Var> res;
    int N = 0;
    if (provider) {
        res = provider->residuals(z_tokens, t);
        if (res.empty() || cfg_.depth % static_cast<int>(res.size()) != 0)
            throw DataError("dit: " + std::to_string(res.size()) +
                            " control residuals cannot spread over depth " +
                            std::to_string(cfg_.depth));
        N = cfg_.depth / static_cast<int>(res.size());
        for (const auto& r : res)
            if (r->val.shape != std::vector<std::int64_t>{cfg_.tokens(), cfg_.width})
                throw DataError("dit: control residual shaped " + r->val.shape_str() +
                                ", expected [" + std::to_string(cfg_.tokens()) + "," +
                                std::to_string(cfg_.width) + "]");
    }

    Var h = detail::embed_tokens(embed_, z_tokens, cfg_);
    Var c = detail::condition_vector(time_, t, cfg_);
    for (int i = 0; i < cfg_.depth; ++i) {
        h = detail::dit_block_forward(h, c, blocks_[i], cfg_);
        if (provider) h = inject(h, res, i, N);
    }

    Var out = ad::linear(ad::layer_norm_rows(h), head_w_, head_b_);
    // 1/t skip: early in the reverse flow the velocity is dominated by z_t/t,
    // so feed that term directly and let the network learn the correction
    const double gain = 1.0 / std::max(t, cfg_.time_floor);
    return ad::add(out, ad::mul_scalar_param(ad::scale(z_tokens, gain), head_alpha_));
}

LatentGrid DiT::predict(const LatentGrid& z_t, double t, const ResidualProvider* provider) const {
    if (z_t.T_lat != cfg_.t_lat || z_t.h != cfg_.h || z_t.w != cfg_.w)
        throw DataError("dit: latent grid " + std::to_string(z_t.T_lat) + "x" +
                        std::to_string(z_t.h) + "x" + std::to_string(z_t.w) +
                        " does not match the configured token grid");
    Var out = forward(grid_tokens(z_t), t, provider);
    return tokens_to_grid(out->val, cfg_.t_lat, cfg_.h, cfg_.w);
}

Var grid_tokens(const LatentGrid& z) {
    Tensor t = z.data;
    t.shape = {static_cast<std::int64_t>(z.T_lat) * z.h * z.w, z.D_z};
    return ad::constant(std::move(t));
}

LatentGrid tokens_to_grid(const Tensor& tokens, int t_lat, int h, int w) {
    LatentGrid z;
    z.T_lat = t_lat;
    z.h = h;
    z.w = w;
    z.data = tokens;
    z.data.shape = {t_lat, h, w, z.D_z};
    if (z.data.numel() != tokens.numel())
        throw DataError("latent grid: token count does not match grid dims");
    return z;
}

// ---------------- objective / sampling ----------------

ad::Var training_loss(const DiT& dit, const ResidualProvider* provider, const LatentGrid& z0,
                      Rng& rng, double* t_out) {
    const auto& cfg = dit.config();
    if (z0.T_lat != cfg.t_lat || z0.h != cfg.h || z0.w != cfg.w)
        throw DataError("training loss: latent grid does not match the model token grid");
    const double t = rng.uniform();
    if (t_out) *t_out = t;

    const std::int64_t n = z0.data.numel();
    Tensor z_t({cfg.tokens(), kLatentChannels});
    Tensor target({cfg.tokens(), kLatentChannels});
    for (std::int64_t i = 0; i < n; ++i) {
        const double eps = rng.normal();
        z_t.data[i] = (1.0 - t) * z0.data[i] + t * eps;
        target.data[i] = eps - z0.data[i];
    }

    Var v = dit.forward(ad::constant(std::move(z_t)), t, provider);
    Var d = ad::sub(v, ad::constant(std::move(target)));
    return ad::mean_all(ad::mul(d, d));
}

ad::Var training_loss(const DiT& dit, const ResidualProvider* provider, const VideoClip& clip,
                      Rng& rng, double* t_out) {
    return training_loss(dit, provider, encode_latent(clip), rng, t_out);
}

Tensor euler_integrate(Tensor z, int steps,
                       const std::function<Tensor(const Tensor&, double)>& v) {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    const double dt = 1.0 / steps;
    for (int i = 0; i < steps; ++i) {
        const double t = 1.0 - i * dt;
        Tensor vel = v(z, t);
        for (std::int64_t j = 0; j < z.numel(); ++j) z.data[j] -= dt * vel.data[j];
    }
    return z;
}

LatentGrid sample(const DiT& dit, const ResidualProvider* provider, int steps,
                  std::uint64_t seed) {
    const auto& cfg = dit.config();
    Rng rng(seed);
    Tensor z({cfg.tokens(), kLatentChannels});
    for (auto& x : z.data) x = rng.normal();
    Tensor z0 = euler_integrate(std::move(z), steps, [&](const Tensor& zt, double t) {
        return dit.forward(ad::constant(zt), t, provider)->val;
    });
    return tokens_to_grid(z0, cfg.t_lat, cfg.h, cfg.w);
}

}  // namespace s2r
