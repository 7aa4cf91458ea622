#include "s2r/vfm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "s2r/rng.hpp"

namespace s2r {

namespace {
constexpr std::uint64_t kToyVfmSeed = 0xd1770a3ull;
constexpr int kPatch = 16;
constexpr int kInDim = kPatch * kPatch * 3 + 3 + kPatch * kPatch;  // rgb + means + |grad|

// Keys bicubic kernel, a = -0.5
double cubic(double t) {
    constexpr double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}
}  // namespace

ToyVFM::ToyVFM(int channels) : C_(channels) {
    if (channels < 1) throw ConfigError("toy vfm: channels must be >= 1");
    Rng rng(kToyVfmSeed);
    weights_.resize(static_cast<std::size_t>(C_) * kInDim);
    for (int c = 0; c < C_; ++c) {
        double norm2 = 0.0;
        float* row = weights_.data() + static_cast<std::size_t>(c) * kInDim;
        for (int j = 0; j < kInDim; ++j) {
            row[j] = static_cast<float>(rng.normal());
            norm2 += static_cast<double>(row[j]) * row[j];
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
        for (int j = 0; j < kInDim; ++j) row[j] *= inv;
    }
}

void ToyVFM::encode_frame(const float* frame, int H, int W, float* out) const {
    if (H % kPatch || W % kPatch) throw DataError("toy vfm: frame dims must be multiples of 16");
    const int gh = H / kPatch, gw = W / kPatch;
    std::vector<float> x(kInDim);
    std::vector<float> gray(kPatch * kPatch);
    for (int py = 0; py < gh; ++py) {
        for (int px = 0; px < gw; ++px) {
            // flattened patch RGB
            double mean[3] = {0, 0, 0};
            for (int y = 0; y < kPatch; ++y) {
                const float* src = frame + ((static_cast<std::size_t>(py) * kPatch + y) * W +
                                            static_cast<std::size_t>(px) * kPatch) * 3;
                for (int xx = 0; xx < kPatch; ++xx)
                    for (int c = 0; c < 3; ++c) {
                        float v = src[xx * 3 + c];
                        x[(y * kPatch + xx) * 3 + c] = v;
                        mean[c] += v;
                    }
            }
            for (int c = 0; c < 3; ++c)
                x[kPatch * kPatch * 3 + c] = static_cast<float>(mean[c] / (kPatch * kPatch));
            // patch-local gradient magnitudes on grayscale (one-sided at borders
            // so the feature never reads outside its own patch)
            for (int i = 0; i < kPatch * kPatch; ++i)
                gray[i] = (x[i * 3] + x[i * 3 + 1] + x[i * 3 + 2]) / 3.0f;
            for (int y = 0; y < kPatch; ++y)
                for (int xx = 0; xx < kPatch; ++xx) {
                    int xp = std::min(xx + 1, kPatch - 1), xm = std::max(xx - 1, 0);
                    int yp = std::min(y + 1, kPatch - 1), ym = std::max(y - 1, 0);
                    float gx = gray[y * kPatch + xp] - gray[y * kPatch + xm];
                    float gy = gray[yp * kPatch + xx] - gray[ym * kPatch + xx];
                    x[kPatch * kPatch * 3 + 3 + y * kPatch + xx] = std::sqrt(gx * gx + gy * gy);
                }
            float* dst = out + (static_cast<std::size_t>(py) * gw + px) * C_;
            for (int c = 0; c < C_; ++c) {
                const float* row = weights_.data() + static_cast<std::size_t>(c) * kInDim;
                double acc = 0.0;
                for (int j = 0; j < kInDim; ++j) acc += static_cast<double>(row[j]) * x[j];
                dst[c] = static_cast<float>(acc);
            }
        }
    }
}

std::unique_ptr<VFMBackend> make_toy_vfm(int channels) {
    return std::make_unique<ToyVFM>(channels);
}

VideoClip upscale_video(const VideoClip& clip, int S) {
    if (S != 1 && S != 2 && S != 4) throw ConfigError("upscale: S must be one of {1,2,4}");
    if (S == 1) return clip;
    const int H = clip.H, W = clip.W, Ho = H * S, Wo = W * S;
    VideoClip out(clip.T, Ho, Wo);
    // precompute per-axis taps: src = (dst + 0.5)/S - 0.5
    struct Tap {
        int idx[4];
        double w[4];
    };
    auto make_taps = [&](int n_out, int n_in) {
        std::vector<Tap> taps(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            double src = (o + 0.5) / S - 0.5;
            int base = static_cast<int>(std::floor(src)) - 1;
            for (int k = 0; k < 4; ++k) {
                int i = base + k;
                taps[o].idx[k] = std::clamp(i, 0, n_in - 1);
                taps[o].w[k] = cubic(src - i);
            }
        }
        return taps;
    };
    auto ty = make_taps(Ho, H);
    auto tx = make_taps(Wo, W);
    for (int t = 0; t < clip.T; ++t) {
        const float* src = clip.frame(t);
        float* dst = out.frame(t);
        for (int yo = 0; yo < Ho; ++yo) {
            for (int xo = 0; xo < Wo; ++xo) {
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int ky = 0; ky < 4; ++ky) {
                        const float* row = src + static_cast<std::size_t>(ty[yo].idx[ky]) * W * 3;
                        double h = 0.0;
                        for (int kx = 0; kx < 4; ++kx)
                            h += tx[xo].w[kx] * row[tx[xo].idx[kx] * 3 + c];
                        acc += ty[yo].w[ky] * h;
                    }
                    dst[(static_cast<std::size_t>(yo) * Wo + xo) * 3 + c] =
                        static_cast<float>(std::clamp(acc, 0.0, 1.0));
                }
            }
        }
    }
    return out;
}

FeatureGrid extract_features(const VideoClip& clip, const VFMBackend& backend, int S) {
    if (clip.H % 16 || clip.W % 16) throw DataError("extract_features: dims must divide by 16");
    VideoClip up = upscale_video(clip, S);
    FeatureGrid grid(clip.T, up.H / 16, up.W / 16, backend.channels());
    grid.scale_S = S;
    for (int t = 0; t < clip.T; ++t)
        backend.encode_frame(up.frame(t), up.H, up.W,
                             grid.data.data() + static_cast<std::size_t>(t) * grid.h * grid.w * grid.C);
    for (float v : grid.data)
        if (!std::isfinite(v)) throw NumericError("extract_features: non-finite feature");
    return grid;
}

void write_feature_cache(const std::string& path, const FeatureGrid& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os.write("VFMF", 4);
    auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(1);  // version
    put_u32(static_cast<std::uint32_t>(grid.T));
    put_u32(static_cast<std::uint32_t>(grid.h));
    put_u32(static_cast<std::uint32_t>(grid.w));
    put_u32(static_cast<std::uint32_t>(grid.C));
    os.write(reinterpret_cast<const char*>(grid.data.data()),
             static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
    if (!os) throw DataError("feature cache write failed: " + path);
}

FeatureGrid read_feature_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VFMF", 4) != 0)
        throw DataError("bad feature cache magic: " + path);
    auto get_u32 = [&] {
        std::uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    std::uint32_t version = get_u32();
    if (version != 1) throw DataError("unsupported feature cache version: " + path);
    std::uint32_t T = get_u32(), h = get_u32(), w = get_u32(), C = get_u32();
    if (!is || !T || !h || !w || !C) throw DataError("bad feature cache header: " + path);
    FeatureGrid grid(static_cast<int>(T), static_cast<int>(h), static_cast<int>(w),
                     static_cast<int>(C));
    is.read(reinterpret_cast<char*>(grid.data.data()),
            static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
    if (!is) throw DataError("feature cache truncated: " + path);
    return grid;
}

}  // namespace s2r
