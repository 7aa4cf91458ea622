#pragma once

#include <functional>
#include <string>
#include <vector>

#include "s2r/media.hpp"
#include "s2r/nn.hpp"

namespace s2r {

// Latent channel count of the invertible pixel transform:
// RGB x (16x16 pixel shuffle) x (4-frame causal group).
inline constexpr int kLatentChannels = 3 * 16 * 16 * 4;

// Deterministic stand-in for a learned video VAE.  Frame 0 is kept alone
// (its group zero-padded); every following run of 4 frames forms one latent
// step, so T pixels frames map to 1 + (T-1)/4 latent frames and decode is an
// exact inverse, bit for bit.
struct LatentGrid {
    int T_lat = 0, h = 0, w = 0, D_z = kLatentChannels;
    Tensor data;  // [T_lat, h, w, D_z]
};

LatentGrid encode_latent(const VideoClip& clip);
VideoClip decode_latent(const LatentGrid& z);

struct DiTConfig {
    int depth = 8;  // transformer blocks, alternating spatial/temporal attention
    int width = 64;
    int heads = 4;
    int time_dim = 32;  // sinusoidal timestep feature size
    int t_lat = 5, h = 4, w = 4;  // token grid
    double time_floor = 0.02;     // clamp for the 1/t input-skip gain in the head

    int tokens() const { return t_lat * h * w; }
    void validate() const;
};

// Supplies control residuals for a given noisy token state; the conditioning
// branch implements this, tests can stub it.
class ResidualProvider {
public:
    virtual ~ResidualProvider() = default;
    virtual std::vector<ad::Var> residuals(const ad::Var& z_tokens, double t) const = 0;
};

namespace detail {

// One transformer block: adaptive layer modulation from the conditioning
// vector (zero-initialized, so blocks start as identities), attention over
// one factorized axis, then a gated MLP.
struct DiTBlock {
    ad::Var mod_w, mod_b;  // width -> 6*width: shift/scale/gate for attn and mlp
    ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Var w1, b1, w2, b2;
    bool temporal = false;  // attention axis: within-frame or across-frames
};

struct TokenEmbed {
    ad::Var in_w, in_b;                  // D_z -> width
    ad::Var pos_spatial, pos_temporal;   // [h*w, width], [t_lat, width]
};

struct TimeEmbed {
    ad::Var w1, b1, w2, b2;  // time_dim -> width -> width
    ad::Var null_emb;        // learned stand-in for text conditioning, [1, width]
};

ad::Var dit_block_forward(const ad::Var& x, const ad::Var& c, const DiTBlock& bp,
                          const DiTConfig& cfg);
ad::Var embed_tokens(const TokenEmbed& te, const ad::Var& z_tokens, const DiTConfig& cfg);
ad::Var condition_vector(const TimeEmbed& te, double t, const DiTConfig& cfg);

}  // namespace detail

// [1, dim]: interleaved sin/cos features of t (t in [0,1], scaled internally)
Tensor sinusoidal_time_embedding(double t, int dim);

// Residual injection: after denoiser block i (0-indexed), when (i+1) % N == 0,
// add residuals[(i+1)/N - 1] to the hidden stream; otherwise pass through.
ad::Var inject(const ad::Var& hidden, const std::vector<ad::Var>& residuals, int block_index,
               int N);

class DiT {
public:
    DiT(const DiTConfig& cfg, ParamStore& params, Rng& rng, std::string prefix = "dit.");

    // z_tokens: [tokens(), D_z]; returns the velocity prediction, same shape.
    // With a provider, its residuals are added every depth/len(residuals)
    // blocks; with none this is the base model.
    ad::Var forward(const ad::Var& z_tokens, double t,
                    const ResidualProvider* provider = nullptr) const;

    LatentGrid predict(const LatentGrid& z_t, double t,
                       const ResidualProvider* provider = nullptr) const;

    const DiTConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }
    const std::vector<detail::DiTBlock>& blocks() const { return blocks_; }
    const detail::TokenEmbed& token_embed() const { return embed_; }
    const detail::TimeEmbed& time_embed() const { return time_; }

private:
    DiTConfig cfg_;
    std::string prefix_;
    detail::TokenEmbed embed_;
    detail::TimeEmbed time_;
    std::vector<detail::DiTBlock> blocks_;
    ad::Var head_w_, head_b_, head_alpha_;
};

// tokens <-> grid; the row-major grid flattens exactly to t-major token order
ad::Var grid_tokens(const LatentGrid& z);
LatentGrid tokens_to_grid(const Tensor& tokens, int t_lat, int h, int w);

// Rectified-flow objective: t ~ U(0,1), eps ~ N(0,I), z_t = (1-t) z0 + t eps,
// loss = mean || v(z_t, t) - (eps - z0) ||^2.  Draws t first, then eps in
// row-major order, so a given rng state fixes the step exactly.
ad::Var training_loss(const DiT& dit, const ResidualProvider* provider, const LatentGrid& z0,
                      Rng& rng, double* t_out = nullptr);
ad::Var training_loss(const DiT& dit, const ResidualProvider* provider, const VideoClip& clip,
                      Rng& rng, double* t_out = nullptr);

// Euler integration of dz/dt = v(z, t) from t=1 down to 0 in `steps` uniform
// steps: z <- z - (1/steps) * v(z, 1 - i/steps)
Tensor euler_integrate(Tensor z, int steps, const std::function<Tensor(const Tensor&, double)>& v);

// z(1) drawn N(0,I) from `seed`, then Euler integration with the model velocity
LatentGrid sample(const DiT& dit, const ResidualProvider* provider, int steps,
                  std::uint64_t seed);

}  // namespace s2r
