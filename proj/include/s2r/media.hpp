#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2r/common.hpp"

namespace s2r {

// Float RGB video, values in [0,1], layout [T,H,W,3] row-major.
struct VideoClip {
    int T = 0, H = 0, W = 0;
    std::vector<float> data;

    VideoClip() = default;
    VideoClip(int t, int h, int w) : T(t), H(h), W(w), data(static_cast<std::size_t>(t) * h * w * 3, 0.f) {}

    float* frame(int t) { return data.data() + static_cast<std::size_t>(t) * H * W * 3; }
    const float* frame(int t) const { return data.data() + static_cast<std::size_t>(t) * H * W * 3; }
    float& at(int t, int y, int x, int c) {
        return data[((static_cast<std::size_t>(t) * H + y) * W + x) * 3 + c];
    }
    float at(int t, int y, int x, int c) const {
        return data[((static_cast<std::size_t>(t) * H + y) * W + x) * 3 + c];
    }
};

// Instance-id masks, 0 = background, layout [T,H,W].
struct MaskClip {
    int T = 0, H = 0, W = 0;
    std::vector<std::uint8_t> data;

    MaskClip() = default;
    MaskClip(int t, int h, int w) : T(t), H(h), W(w), data(static_cast<std::size_t>(t) * h * w, 0) {}

    std::uint8_t& at(int t, int y, int x) {
        return data[(static_cast<std::size_t>(t) * H + y) * W + x];
    }
    std::uint8_t at(int t, int y, int x) const {
        return data[(static_cast<std::size_t>(t) * H + y) * W + x];
    }
};

// Forward optical flow in pixels, layout [T-1,H,W,2] (dx,dy); flow[t] maps
// frame t content to its position in frame t+1.
struct FlowField {
    int T = 0, H = 0, W = 0;  // T = number of flow steps (frames - 1)
    std::vector<float> data;

    FlowField() = default;
    FlowField(int t, int h, int w) : T(t), H(h), W(w), data(static_cast<std::size_t>(t) * h * w * 2, 0.f) {}

    float& at(int t, int y, int x, int c) {
        return data[((static_cast<std::size_t>(t) * H + y) * W + x) * 2 + c];
    }
    float at(int t, int y, int x, int c) const {
        return data[((static_cast<std::size_t>(t) * H + y) * W + x) * 2 + c];
    }
};

// ---- PNG (8-bit, lossless) ----
void write_png_rgb(const std::string& path, const std::uint8_t* rgb, int w, int h);
void write_png_gray(const std::string& path, const std::uint8_t* gray, int w, int h);
void read_png_rgb(const std::string& path, std::vector<std::uint8_t>& rgb, int& w, int& h);
void read_png_gray(const std::string& path, std::vector<std::uint8_t>& gray, int& w, int& h);

// ---- clip directories (frame_%05d.png / mask_%05d.png / meta.txt) ----
void write_clip_dir(const std::string& dir, const VideoClip& clip, const MaskClip* masks,
                    const FlowField* flow, std::uint64_t seed);
VideoClip read_clip_dir(const std::string& dir);
MaskClip read_clip_masks(const std::string& dir);
FlowField read_clip_flow(const std::string& dir);

// Middlebury .flo single-step flow files
void write_flo(const std::string& path, const float* data, int w, int h);
void read_flo(const std::string& path, std::vector<float>& data, int& w, int& h);

struct ClipMeta {
    int T = 0, H = 0, W = 0;
    std::uint64_t seed = 0;
};
ClipMeta read_clip_meta(const std::string& dir);

// quantization helpers shared by writer/reader
inline std::uint8_t to_u8(float v) {
    float x = v * 255.0f + 0.5f;
    if (x < 0.f) x = 0.f;
    if (x > 255.f) x = 255.f;
    return static_cast<std::uint8_t>(x);
}
inline float from_u8(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

}  // namespace s2r
