#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "s2r/media.hpp"

namespace s2r {

// Dense per-frame feature grid: [T, h, w, C] with h = H*S/16, w = W*S/16.
struct FeatureGrid {
    int T = 0, h = 0, w = 0, C = 0;
    int patch = 16;
    int scale_S = 1;
    std::vector<float> data;

    FeatureGrid() = default;
    FeatureGrid(int t, int hh, int ww, int c)
        : T(t), h(hh), w(ww), C(c), data(static_cast<std::size_t>(t) * hh * ww * c, 0.f) {}

    float& at(int t, int y, int x, int c) {
        return data[((static_cast<std::size_t>(t) * h + y) * w + x) * C + c];
    }
    float at(int t, int y, int x, int c) const {
        return data[((static_cast<std::size_t>(t) * h + y) * w + x) * C + c];
    }
};

// Frame-wise feature extractor interface.  Implementations see exactly one
// frame per call, which makes cross-frame mixing structurally impossible
// (frame independence is the property the conditioning pipeline relies on).
class VFMBackend {
public:
    virtual ~VFMBackend() = default;
    virtual int channels() const = 0;
    // frame: [H,W,3] row-major floats in [0,1]; out: [H/16, W/16, channels()]
    virtual void encode_frame(const float* frame, int H, int W, float* out) const = 0;
};

// Deterministic stand-in backend: per 16x16 patch, the feature is a
// fixed-seed random linear map of (flattened RGB, patch channel means,
// patch-local gradient magnitudes), with each output channel's weights
// normalized to unit norm so channels share scale.
class ToyVFM : public VFMBackend {
public:
    explicit ToyVFM(int channels = 64);
    int channels() const override { return C_; }
    void encode_frame(const float* frame, int H, int W, float* out) const override;

private:
    int C_;
    std::vector<float> weights_;  // [C, 768 + 3 + 256]
};

std::unique_ptr<VFMBackend> make_toy_vfm(int channels);

// Bicubic input-space upscaling (Keys kernel, a = -0.5), S in {1,2,4}.
VideoClip upscale_video(const VideoClip& clip, int S);

// upscale by S then encode per frame; output [T, H*S/16, W*S/16, C]
FeatureGrid extract_features(const VideoClip& clip, const VFMBackend& backend, int S);

// On-disk cache: magic "VFMF", version u32, then T,h,w,C as u32, then
// row-major float32 payload, all little-endian.
void write_feature_cache(const std::string& path, const FeatureGrid& grid);
FeatureGrid read_feature_cache(const std::string& path);

}  // namespace s2r
