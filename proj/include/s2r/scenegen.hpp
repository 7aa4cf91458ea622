#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2r/media.hpp"

namespace s2r {

enum class TextureLevel { flat, textured };  // flat = sim rendering, textured = real

struct SceneSpec {
    std::uint64_t seed = 0;
    int num_objects = 2;
    int T = 17;
    int H = 64, W = 64;
    double motion_speed = 1.0;          // pixels/frame, rounded to integer steps
    TextureLevel texture_level = TextureLevel::flat;  // which single rendering to prefer;
                                                      // generate_clip always produces both
};

struct PairedClip {
    VideoClip sim;
    VideoClip real;
    MaskClip masks;   // instance ids, 0 = background
    FlowField flow;   // exact forward flow of the shared trajectories
};

// Deterministic paired sim/real renderer.  Objects are axis-aligned rectangles
// and discs on integer linear trajectories with wall bounce, each confined to
// its own horizontal band so instance labels stay visible in every frame.
PairedClip generate_clip(const SceneSpec& spec);

// Flat palette shared by renderer and the toy mask classifier in the metrics.
// Index 0 is the background color; object id i uses palette_color(i).
const float* palette_color(int id);  // -> float[3]
int palette_size();                  // object colors available (excludes background)

// Writes <dir>/<c###_sim>/ and <dir>/<c###_real>/ per spec plus a tab-separated
// manifest (clip_id, T, H, W per row).  Returns the manifest path.
std::string write_dataset(const std::vector<SceneSpec>& specs, const std::string& dir);

struct ManifestRow {
    std::string clip_id;
    int T = 0, H = 0, W = 0;
};
std::vector<ManifestRow> read_manifest(const std::string& path);

}  // namespace s2r
