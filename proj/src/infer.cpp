#include "s2r/infer.hpp"

#include <algorithm>
#include <cstring>

namespace s2r {

namespace {

void clamp_unit(VideoClip& clip) {
    for (auto& v : clip.data) v = std::clamp(v, 0.0f, 1.0f);
}

std::uint64_t window_seed(std::uint64_t seed, int window) {
    return window == 0 ? seed
                       : hash_u64(hash_u64(seed) ^ hash_u64(static_cast<std::uint64_t>(window)));
}

VideoClip copy_window(const VideoClip& clip, int start, int T) {
    VideoClip out(T, clip.H, clip.W);
    std::memcpy(out.data.data(), clip.frame(start), out.data.size() * sizeof(float));
    return out;
}

}  // namespace

LatentGrid generate_latent(const Pipeline& p, const VideoClip& sim, int k, int steps,
                           std::uint64_t seed) {
    if (!p.conditioned())
        throw ConfigError("translate needs a conditioned pipeline (branch + aligner)");
    if (k < 1 || k > p.basis.k_m)
        throw ConfigError("k=" + std::to_string(k) + " outside valid range [1, " +
                          std::to_string(p.basis.k_m) + "]");
    const int want_T = 4 * (p.cfg.dit.t_lat - 1) + 1;
    if (sim.T != want_T || sim.H != p.cfg.dit.h * 16 || sim.W != p.cfg.dit.w * 16)
        throw DataError("sim clip is " + std::to_string(sim.T) + "x" + std::to_string(sim.H) +
                        "x" + std::to_string(sim.W) + ", the pipeline expects " +
                        std::to_string(want_T) + "x" + std::to_string(p.cfg.dit.h * 16) + "x" +
                        std::to_string(p.cfg.dit.w * 16));

    FeatureGrid masked =
        apply_mask(condition_features(p, sim), make_channel_mask(k, p.basis.k_m));
    ConditionLatent cond = p.aligner->run(masked);
    BoundCondition bound(*p.branch, cond);
    return sample(*p.dit, &bound, steps, seed);
}

VideoClip translate(const Pipeline& p, const VideoClip& sim, int k, int steps,
                    std::uint64_t seed) {
    VideoClip out = decode_latent(generate_latent(p, sim, k, steps, seed));
    clamp_unit(out);
    return out;
}

VideoClip translate_long(const Pipeline& p, const VideoClip& sim, int chunk_T, int k, int steps,
                         std::uint64_t seed) {
    if (chunk_T < 5) throw ConfigError("translate_long: chunk_T must be at least 5");
    if (chunk_T > sim.T) return translate(p, sim, k, steps, seed);
    if ((sim.T - 1) % (chunk_T - 1) != 0)
        throw DataError("translate_long: clip length " + std::to_string(sim.T) +
                        " does not split into windows of " + std::to_string(chunk_T) +
                        " overlapping by one; pad or crop the clip");

    const int n_windows = (sim.T - 1) / (chunk_T - 1);
    VideoClip out(sim.T, sim.H, sim.W);
    LatentGrid prev;
    for (int i = 0; i < n_windows; ++i) {
        const int start = i * (chunk_T - 1);
        LatentGrid lat =
            generate_latent(p, copy_window(sim, start, chunk_T), k, steps, window_seed(seed, i));
        if (i > 0) {
            // latent carry-over: the window opens on the previous window's
            // last generated latent frame
            const std::int64_t frame_sz =
                static_cast<std::int64_t>(lat.h) * lat.w * lat.D_z;
            std::memcpy(lat.data.ptr(), prev.data.ptr() + (prev.T_lat - 1) * frame_sz,
                        static_cast<std::size_t>(frame_sz) * sizeof(double));
        }
        VideoClip decoded = decode_latent(lat);
        clamp_unit(decoded);
        std::memcpy(out.frame(start), decoded.data.data(), decoded.data.size() * sizeof(float));
        prev = std::move(lat);
    }
    return out;
}

std::vector<StageShape> dry_run_shapes(const ShapeQuery& q) {
    if (q.H < 16 || q.W < 16 || q.H % 16 || q.W % 16)
        throw ConfigError("H and W must be positive multiples of 16, got " + std::to_string(q.H) +
                          "x" + std::to_string(q.W));
    if (q.T < 1 || (q.T - 1) % 4 != 0)
        throw ConfigError("T ≡ 1 mod 4 required, got T=" + std::to_string(q.T));
    if (q.S != 1 && q.S != 2 && q.S != 4)
        throw ConfigError("S must be 1, 2, or 4, got " + std::to_string(q.S));
    if (q.temporal_ratio != 4)
        throw ConfigError("temporal_ratio must be 4 to land on the latent timeline, got " +
                          std::to_string(q.temporal_ratio));
    if (q.vfm_channels < 1)
        throw ConfigError("vfm channels must be >= 1, got " + std::to_string(q.vfm_channels));
    if (q.k_m < 1 || q.k_m > q.vfm_channels)
        throw ConfigError("k_m must lie in [1, vfm channels=" + std::to_string(q.vfm_channels) +
                          "], got " + std::to_string(q.k_m));
    if (q.aligner_hidden < 8 || q.aligner_hidden % 8)
        throw ConfigError("aligner hidden must be a positive multiple of 8, got " +
                          std::to_string(q.aligner_hidden));
    if (q.cond_dim < 1)
        throw ConfigError("condition width must be >= 1, got " + std::to_string(q.cond_dim));

    const std::int64_t T = q.T, gh = static_cast<std::int64_t>(q.H) * q.S / 16,
                       gw = static_cast<std::int64_t>(q.W) * q.S / 16;
    const std::int64_t th = q.H / 16, tw = q.W / 16;
    const std::int64_t t_lat = 1 + (T - 1) / q.temporal_ratio;

    return {
        {"V", {T, q.H, q.W, 3}},
        {"features Z_c", {T, gh, gw, q.vfm_channels}},
        {"projected", {T, gh, gw, q.k_m}},
        {"aligned", {T, th, tw, q.aligner_hidden}},
        {"condition", {t_lat, th, tw, q.cond_dim}},
        {"z latent", {t_lat, th, tw, kLatentChannels}},
    };
}

std::string format_shapes(const std::vector<StageShape>& stages) {
    std::string out;
    for (const auto& s : stages) {
        out += s.name + " [";
        for (std::size_t i = 0; i < s.dims.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s.dims[i]);
        }
        out += "]\n";
    }
    return out;
}

}  // namespace s2r
