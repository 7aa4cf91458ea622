#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "s2r/media.hpp"
#include "s2r/rng.hpp"
#include "s2r/scenegen.hpp"

namespace s2r {

// Unit-length feature vector (callers normalize; see normalized()).
using Embedding = std::vector<double>;

// v / ||v||2.  NumericError on a (near-)zero vector, since a direction-less
// embedding cannot be compared by cosine.
Embedding normalized(const Embedding& v);

// Ratio score (x . t_p) / (x . t_n): how much closer the frame sits to the
// positive anchor than to the negative one.  Homogeneous of degree 0 in x, so
// any positive rescaling of x cancels.  NumericError when |x . t_n| < 1e-12.
double clip_real(const Embedding& x, const Embedding& t_p, const Embedding& t_n);

// Maps a pixel rectangle to an embedding.  Implementations must be pure and
// deterministic; unit-normalizing the result is their responsibility.
class PatchEmbedder {
public:
    virtual ~PatchEmbedder() = default;
    // rectangle rows [y0, y0+ph) x cols [x0, x0+pw) of frame t.
    // DataError if the rectangle leaves the frame.
    virtual Embedding embed(const VideoClip& clip, int t, int y0, int x0, int ph,
                            int pw) const = 0;
};

// Built-in toy embedder: 8 bins per color channel (24 dims) plus an 8-bin
// gradient-magnitude histogram (8 dims), L2-normalized.  Cheap, pretrained-
// model-free, and sensitive to both palette and texture.
class HistogramEmbedder final : public PatchEmbedder {
public:
    Embedding embed(const VideoClip& clip, int t, int y0, int x0, int ph,
                    int pw) const override;
    static constexpr int kDims = 32;
};

// One frame backward-warped by one flow step.  Output pixel (y, x) samples
// the source bilinearly at (x + u, y + v) with (u, v) = flow.at(step, y, x);
// samples falling outside [0, W-1] x [0, H-1] are marked invalid instead of
// clamped, so downstream SSIM can exclude them.
struct WarpResult {
    int H = 0, W = 0;
    std::vector<float> rgb;            // [H, W, 3]
    std::vector<std::uint8_t> valid;   // [H, W], 1 = sample landed in bounds
};
WarpResult backward_warp(const VideoClip& src, int t, const FlowField& flow, int step);

// Mean structural similarity between two [H, W, channels] images in [0, 1]:
// 11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, averaged over
// channels and over every center whose full window fits inside the image and
// (when `valid` is given) covers only valid pixels.  DataError when no window
// qualifies.  ssim(a, a) == 1.0 exactly.
double ssim(const float* a, const float* b, int H, int W, int channels,
            const std::uint8_t* valid = nullptr);

// Temporal stability: mean over t of ssim(frame_t, backward_warp(frame_{t+d}))
// for d = 1..window, chaining flow steps for d > 1, reported x100.  The flow
// must come from the clip's source trajectories (the toy generator emits the
// exact field).  Besides out-of-bounds samples, pixels whose sample location
// is contested by differently-moving content (occlusion at a leading edge,
// detected by splatting the flow) are excluded, so exact flow on rigid motion
// scores 100 rather than being punished for what warping cannot represent.
// DataError when flow length or frame size disagrees with gen.
double warp_ssim(const VideoClip& gen, const FlowField& flow, int window = 1);

// Grid-aligned patch address inside a clip set: clip index, frame, top-left.
struct PatchRef {
    int clip = 0, t = 0, y0 = 0, x0 = 0;
};

struct PatchPairSet {
    int p = 0;  // patch edge length
    std::vector<std::pair<PatchRef, PatchRef>> pairs;  // (cg, matched real)
};

// Semantics-aware pairing: draw n_pairs distinct patches (size p, stride-p
// grid) from the CG clips with Rng(seed), and match each to the real patch
// with the highest embedding dot product (ties -> lowest pool index).  The
// real pool is the full grid over all real clips.  ConfigError when
// n_pairs < 1; DataError when p exceeds a frame or n_pairs exceeds the CG
// grid, or either side has no patches.
PatchPairSet semantics_aware_pairs(const std::vector<VideoClip>& cg,
                                   const std::vector<VideoClip>& real,
                                   const PatchEmbedder& embedder, int p, int n_pairs,
                                   std::uint64_t seed);

// Frechet distance ||mu_a - mu_b||^2 + tr(Sa + Sb - 2(Sa Sb)^{1/2}) between
// the Gaussians fitted to the two feature sets (unbiased covariance).  When
// either covariance has an eigenvalue below 1e-8, 1e-6*I is added to both and
// a note goes to stderr.  DataError unless both sides have >= 2 samples of
// one common dimension.
double fid(const std::vector<Embedding>& a, const std::vector<Embedding>& b);

// Unbiased MMD^2 with the polynomial kernel (x.y/d + 1)^3, reported x100.
// Same preconditions as fid.
double kid(const std::vector<Embedding>& a, const std::vector<Embedding>& b);

// Structural consistency against ground-truth instance masks.  Each pixel is
// classified to the nearest toy-palette color (background + the six object
// colors); instance id i maps to color class 1 + (i-1) % 6.  IoU per class,
// mean over the classes that occur (union > 0).  Only the "toy" palette is
// built in; any other name is a DataError (a learned segmenter would slot in
// here).
struct IoUReport {
    std::vector<double> iou;          // per class, background first
    std::vector<std::uint8_t> present;  // 1 where the class has union > 0
    double miou = 0.0;
};
IoUReport mask_consistency(const VideoClip& gen, const MaskClip& gt,
                           const std::string& palette = "toy");

// Plain mean squared error over every value of two same-shape clips.
double mse(const VideoClip& a, const VideoClip& b);

}  // namespace s2r
