#include "s2r/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "s2r/rng.hpp"

namespace s2r {

namespace {

constexpr float kBackground[3] = {0.45f, 0.45f, 0.45f};
constexpr float kPalette[6][3] = {
    {0.85f, 0.20f, 0.20f}, {0.20f, 0.65f, 0.85f}, {0.90f, 0.75f, 0.15f},
    {0.30f, 0.75f, 0.30f}, {0.70f, 0.35f, 0.80f}, {0.95f, 0.55f, 0.20f},
};
constexpr std::uint64_t kTextureSeed = 0x5eed7e87u;  // shared "material" across clips

struct Obj {
    bool disc = false;
    int w = 0, h = 0;        // bounding box (disc: w == h)
    int x = 0, y = 0;        // top-left, integer pixel positions
    int vx = 0, vy = 0;
    int y_min = 0, y_max = 0;  // allowed top-left range within the band
};

// one reflected integer step along an axis within [lo, hi]
void bounce_step(int& p, int& v, int lo, int hi) {
    p += v;
    if (p < lo) {
        p = lo + (lo - p);
        v = -v;
    }
    if (p > hi) {
        p = hi - (p - hi);
        v = -v;
    }
    // a band narrower than the step could still overshoot; clamp defensively
    p = std::clamp(p, lo, hi);
}

// two-octave bilinear lattice noise in [0,1], anchored at integer coords
double lattice(std::uint64_t cell_seed, double fx, double fy) {
    auto corner = [&](std::int64_t ix, std::int64_t iy) {
        std::uint64_t k = static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ull ^
                          static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4full;
        return hash_uniform(cell_seed, k);
    };
    double ix = std::floor(fx), iy = std::floor(fy);
    double tx = fx - ix, ty = fy - iy;
    auto i0 = static_cast<std::int64_t>(ix), j0 = static_cast<std::int64_t>(iy);
    double v00 = corner(i0, j0), v10 = corner(i0 + 1, j0);
    double v01 = corner(i0, j0 + 1), v11 = corner(i0 + 1, j0 + 1);
    return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

double value_noise(int id, double u, double v) {
    std::uint64_t s = kTextureSeed ^ (static_cast<std::uint64_t>(id) * 0x100000001b3ull);
    return 0.6 * lattice(s, u / 8.0, v / 8.0) + 0.4 * lattice(s ^ 0xabcdef12345ull, u / 3.0, v / 3.0);
}

void validate(const SceneSpec& s) {
    if (s.T < 5) throw ConfigError("scene spec: T must be >= 5");
    if (s.H < 64 || s.W < 64 || s.H % 16 || s.W % 16)
        throw ConfigError("scene spec: H,W must be >= 64 and divisible by 16");
    if (s.num_objects < 1) throw ConfigError("scene spec: num_objects must be >= 1");
    if (s.H / s.num_objects < 12)
        throw ConfigError("scene spec: too many objects for height (band < 12px)");
    if (s.motion_speed < 0) throw ConfigError("scene spec: motion_speed must be >= 0");
}

}  // namespace

const float* palette_color(int id) {
    if (id == 0) return kBackground;
    return kPalette[(id - 1) % 6];
}
int palette_size() { return 6; }

PairedClip generate_clip(const SceneSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const int band_h = spec.H / spec.num_objects;
    const int speed = static_cast<int>(std::lround(spec.motion_speed));

    std::vector<Obj> objs(static_cast<std::size_t>(spec.num_objects));
    for (int i = 0; i < spec.num_objects; ++i) {
        Obj& o = objs[static_cast<std::size_t>(i)];
        o.disc = rng.below(2) == 1;
        const int max_side = std::min({18, band_h - 4, spec.W / 4});
        const int min_side = std::min(6, max_side);
        o.w = min_side + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side - min_side + 1)));
        o.h = o.disc ? o.w
                     : min_side + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side - min_side + 1)));
        o.y_min = i * band_h + 1;
        o.y_max = i * band_h + band_h - o.h - 1;
        if (o.y_max < o.y_min) o.y_max = o.y_min;
        o.x = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.W - o.w - 2)));
        o.y = o.y_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.y_max - o.y_min + 1)));
        if (speed > 0) {
            o.vx = (rng.below(2) ? 1 : -1) * speed;
            // vertical motion kept slower than the band so bounces stay tame
            int vy_mag = static_cast<int>(rng.below(static_cast<std::uint64_t>(speed + 1)));
            o.vy = vy_mag == 0 ? 0 : (rng.below(2) ? 1 : -1) * vy_mag;
        }
    }

    PairedClip out;
    out.sim = VideoClip(spec.T, spec.H, spec.W);
    out.real = VideoClip(spec.T, spec.H, spec.W);
    out.masks = MaskClip(spec.T, spec.H, spec.W);
    out.flow = FlowField(spec.T - 1, spec.H, spec.W);

    std::vector<std::vector<std::pair<int, int>>> track(
        static_cast<std::size_t>(spec.num_objects));  // per object, per frame top-left

    for (int t = 0; t < spec.T; ++t) {
        // rasterize masks for this frame
        for (int i = 0; i < spec.num_objects; ++i) {
            Obj& o = objs[static_cast<std::size_t>(i)];
            track[static_cast<std::size_t>(i)].push_back({o.x, o.y});
            const double cx = o.x + o.w / 2.0, cy = o.y + o.h / 2.0, r = o.w / 2.0;
            for (int y = o.y; y < o.y + o.h; ++y) {
                for (int x = o.x; x < o.x + o.w; ++x) {
                    if (o.disc) {
                        double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                        if (dx * dx + dy * dy > r * r) continue;
                    }
                    out.masks.at(t, y, x) = static_cast<std::uint8_t>(i + 1);
                }
            }
        }
        // flat (sim) + textured base (real)
        std::vector<float> real_base(static_cast<std::size_t>(spec.H) * spec.W * 3);
        for (int y = 0; y < spec.H; ++y) {
            for (int x = 0; x < spec.W; ++x) {
                int id = out.masks.at(t, y, x);
                const float* col = palette_color(id);
                double u = x, v = y;
                if (id > 0) {
                    // texture anchored to the object so it translates with it
                    auto [ox, oy] = track[static_cast<std::size_t>(id - 1)].back();
                    u = x - ox;
                    v = y - oy;
                }
                double vn = value_noise(id, u, v);
                double gain = 0.80 + 0.40 * vn;
                for (int c = 0; c < 3; ++c) {
                    out.sim.at(t, y, x, c) = col[c];
                    real_base[(static_cast<std::size_t>(y) * spec.W + x) * 3 + c] =
                        static_cast<float>(col[c] * gain);
                }
            }
        }
        // photometric noise then a mild 3x3 binomial blur, then clamp
        const std::uint64_t noise_seed = spec.seed ^ 0x9042f0e6d1c2b3a4ull;
        for (int y = 0; y < spec.H; ++y)
            for (int x = 0; x < spec.W; ++x)
                for (int c = 0; c < 3; ++c) {
                    std::uint64_t k =
                        ((static_cast<std::uint64_t>(t) * spec.H + y) * spec.W + x) * 3 + c;
                    real_base[(static_cast<std::size_t>(y) * spec.W + x) * 3 + c] +=
                        static_cast<float>(0.015 * hash_normal(noise_seed, k));
                }
        const int kw[3] = {1, 2, 1};
        for (int y = 0; y < spec.H; ++y) {
            for (int x = 0; x < spec.W; ++x) {
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int dy = -1; dy <= 1; ++dy) {
                        int yy = std::clamp(y + dy, 0, spec.H - 1);
                        for (int dx = -1; dx <= 1; ++dx) {
                            int xx = std::clamp(x + dx, 0, spec.W - 1);
                            acc += kw[dy + 1] * kw[dx + 1] *
                                   real_base[(static_cast<std::size_t>(yy) * spec.W + xx) * 3 + c];
                        }
                    }
                    out.real.at(t, y, x, c) = static_cast<float>(std::clamp(acc / 16.0, 0.0, 1.0));
                }
            }
        }
        // advance trajectories
        if (t + 1 < spec.T) {
            for (auto& o : objs) {
                bounce_step(o.x, o.vx, 1, spec.W - o.w - 1);
                bounce_step(o.y, o.vy, o.y_min, o.y_max);
            }
        }
    }

    // exact flow: displacement of the object covering each pixel; background 0
    for (int t = 0; t + 1 < spec.T; ++t) {
        for (int y = 0; y < spec.H; ++y) {
            for (int x = 0; x < spec.W; ++x) {
                int id = out.masks.at(t, y, x);
                if (id == 0) continue;
                auto [x0, y0] = track[static_cast<std::size_t>(id - 1)][static_cast<std::size_t>(t)];
                auto [x1, y1] = track[static_cast<std::size_t>(id - 1)][static_cast<std::size_t>(t) + 1];
                out.flow.at(t, y, x, 0) = static_cast<float>(x1 - x0);
                out.flow.at(t, y, x, 1) = static_cast<float>(y1 - y0);
            }
        }
    }
    return out;
}

std::string write_dataset(const std::vector<SceneSpec>& specs, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create dataset dir: " + dir);
    std::string manifest_path = dir + "/manifest.tsv";
    std::ofstream manifest(manifest_path);
    if (!manifest) throw DataError("cannot write manifest: " + manifest_path);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        PairedClip pc = generate_clip(specs[i]);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "c%03zu", i);
        std::string sim_id = std::string(stem) + "_sim";
        std::string real_id = std::string(stem) + "_real";
        write_clip_dir(dir + "/" + sim_id, pc.sim, &pc.masks, &pc.flow, specs[i].seed);
        write_clip_dir(dir + "/" + real_id, pc.real, &pc.masks, &pc.flow, specs[i].seed);
        manifest << sim_id << '\t' << specs[i].T << '\t' << specs[i].H << '\t' << specs[i].W << '\n';
        manifest << real_id << '\t' << specs[i].T << '\t' << specs[i].H << '\t' << specs[i].W << '\n';
    }
    if (!manifest) throw DataError("manifest write failed: " + manifest_path);
    return manifest_path;
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    std::vector<ManifestRow> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ManifestRow r;
        std::istringstream ss(line);
        if (!(std::getline(ss, r.clip_id, '\t') && ss >> r.T && ss.get() == '\t' && ss >> r.H &&
              ss.get() == '\t' && ss >> r.W))
            throw DataError("malformed manifest row: " + line);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace s2r
