#pragma once

#include <string>
#include <vector>

#include "s2r/train.hpp"

namespace s2r {

// Conditioned sampling for one window of exactly the length/resolution the
// pipeline was built for: features -> project/whiten -> deterministic
// ChannelMask(k) -> aligner -> branch residuals -> Euler integration from
// `seed`.  ConfigError if k lies outside [1, basis.k_m]; DataError if the
// clip's dims do not match the training window.
LatentGrid generate_latent(const Pipeline& p, const VideoClip& sim, int k, int steps,
                           std::uint64_t seed);

// generate_latent + decode, with frames clamped to [0,1].
VideoClip translate(const Pipeline& p, const VideoClip& sim, int k, int steps,
                    std::uint64_t seed);

// Autoregressive stitching for clips longer than one window.  Windows of
// chunk_T frames overlap by one: window i covers input frames
// [i*(chunk_T-1), i*(chunk_T-1) + chunk_T) and is sampled with seed
// (i == 0 ? seed : hash_u64(hash_u64(seed) ^ hash_u64(i))), so the single
// window case is bit-identical to translate.  For i > 0 the window's first
// latent frame is overwritten with the previous window's last generated
// latent frame before decoding (latent carry-over), and the decoded window is
// written at its input offset -- each output frame therefore comes from
// exactly one window, the overlapped boundary frame from the newer window's
// carried latent.  chunk_T longer than the clip falls back to translate;
// otherwise the length must satisfy (T-1) % (chunk_T-1) == 0 (DataError with
// a pad-or-crop hint when it does not).
VideoClip translate_long(const Pipeline& p, const VideoClip& sim, int chunk_T, int k, int steps,
                         std::uint64_t seed);

struct StageShape {
    std::string name;
    std::vector<std::int64_t> dims;
};

struct ShapeQuery {
    int T = 93, H = 704, W = 1280;  // window frames, pixel rows, pixel cols
    int S = 4;
    int vfm_channels = 64;
    int k_m = 32;
    int aligner_hidden = 64;
    int cond_dim = 64;  // aligner out_channels = condition width D
    int temporal_ratio = 4;
};

// Every intermediate shape of the conditioning pipeline, computed from the
// config alone -- no weights are touched.  Spatial axes are reported
// height-first throughout, matching the in-memory layouts.  Stages: V ->
// features -> projected -> aligned (after the spatial stages) -> condition ->
// z latent.  ConfigError names the violated constraint.
std::vector<StageShape> dry_run_shapes(const ShapeQuery& q);

// one "name [d0,d1,...]" line per stage
std::string format_shapes(const std::vector<StageShape>& stages);

}  // namespace s2r
