#include "s2r/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace s2r {

namespace {

double dot(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size())
        throw DataError("embedding dimensions disagree: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

int color_bin(float v) { return std::clamp(static_cast<int>(v * 8.0f), 0, 7); }

// Backward-warp one [H,W,3] plane by one flow step.  `src_valid` (optional)
// marks source pixels a chained warp may read; a sample is valid only when it
// lands in bounds and every referenced texel is itself valid.
WarpResult warp_planes(const float* rgb, const std::uint8_t* src_valid, int H, int W,
                       const FlowField& flow, int step) {
    WarpResult out;
    out.H = H;
    out.W = W;
    out.rgb.assign(static_cast<std::size_t>(H) * W * 3, 0.f);
    out.valid.assign(static_cast<std::size_t>(H) * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float sx = x + flow.at(step, y, x, 0);
            const float sy = y + flow.at(step, y, x, 1);
            if (sx < 0.f || sx > W - 1.f || sy < 0.f || sy > H - 1.f) continue;
            const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            if (src_valid &&
                !(src_valid[y0 * W + x0] && src_valid[y0 * W + x1] && src_valid[y1 * W + x0] &&
                  src_valid[y1 * W + x1]))
                continue;
            const float fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < 3; ++c) {
                const float v00 = rgb[(y0 * W + x0) * 3 + c], v01 = rgb[(y0 * W + x1) * 3 + c];
                const float v10 = rgb[(y1 * W + x0) * 3 + c], v11 = rgb[(y1 * W + x1) * 3 + c];
                out.rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
                    (1.f - fy) * ((1.f - fx) * v00 + fx * v01) +
                    fy * ((1.f - fx) * v10 + fx * v11);
            }
            out.valid[static_cast<std::size_t>(y) * W + x] = 1;
        }
    return out;
}

// Per-output-pixel occlusion mask for one flow step: pixel p samples frame
// t+1 at p + f(p), but that location only shows p's content if no
// differently-moving pixel lands there too.  Splat every source pixel's
// destination footprint and flag cells claimed by more than one flow; a pixel
// whose sample footprint touches a contested cell (or one claimed by an
// incompatible flow) is excluded from SSIM.  Derivable from the flow field
// alone, no scene geometry needed.
std::vector<std::uint8_t> unoccluded_sources(const FlowField& flow, int step, int H, int W) {
    std::vector<float> cfx(static_cast<std::size_t>(H) * W, 0.f), cfy = cfx;
    std::vector<std::uint8_t> state(static_cast<std::size_t>(H) * W, 0);  // 0 empty, 1 set, 2 contested
    auto cells = [&](float sx, float sy, auto&& fn) {
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const int nx = sx == x0 ? 1 : 2, ny = sy == y0 ? 1 : 2;
        for (int dy = 0; dy < ny; ++dy)
            for (int dx = 0; dx < nx; ++dx)
                if (x0 + dx >= 0 && x0 + dx < W && y0 + dy >= 0 && y0 + dy < H)
                    fn(y0 + dy, x0 + dx);
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float fx = flow.at(step, y, x, 0), fy = flow.at(step, y, x, 1);
            cells(x + fx, y + fy, [&](int cy, int cx) {
                const std::size_t i = static_cast<std::size_t>(cy) * W + cx;
                if (state[i] == 0) {
                    state[i] = 1;
                    cfx[i] = fx;
                    cfy[i] = fy;
                } else if (state[i] == 1 &&
                           (std::abs(cfx[i] - fx) > 0.25f || std::abs(cfy[i] - fy) > 0.25f)) {
                    state[i] = 2;
                }
            });
        }
    std::vector<std::uint8_t> ok(static_cast<std::size_t>(H) * W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float fx = flow.at(step, y, x, 0), fy = flow.at(step, y, x, 1);
            cells(x + fx, y + fy, [&](int cy, int cx) {
                const std::size_t i = static_cast<std::size_t>(cy) * W + cx;
                if (state[i] == 2 || (state[i] == 1 && (std::abs(cfx[i] - fx) > 0.25f ||
                                                        std::abs(cfy[i] - fy) > 0.25f)))
                    ok[static_cast<std::size_t>(y) * W + x] = 0;
            });
        }
    return ok;
}

std::vector<double> gaussian_window() {
    std::vector<double> w(11 * 11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const double dy = i - 5, dx = j - 5;
            w[i * 11 + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            sum += w[i * 11 + j];
        }
    for (auto& v : w) v /= sum;
    return w;
}

std::vector<PatchRef> patch_grid(const std::vector<VideoClip>& clips, int p) {
    std::vector<PatchRef> refs;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const VideoClip& c = clips[i];
        if (c.H < p || c.W < p)
            throw DataError("patch size " + std::to_string(p) + " larger than a " +
                            std::to_string(c.H) + "x" + std::to_string(c.W) + " frame");
        for (int t = 0; t < c.T; ++t)
            for (int y = 0; y + p <= c.H; y += p)
                for (int x = 0; x + p <= c.W; x += p)
                    refs.push_back({static_cast<int>(i), t, y, x});
    }
    return refs;
}

// mean and unbiased covariance of a feature set as Eigen types
void fit_gaussian(const std::vector<Embedding>& feats, Eigen::VectorXd& mu,
                  Eigen::MatrixXd& cov) {
    const Eigen::Index n = static_cast<Eigen::Index>(feats.size());
    const Eigen::Index d = static_cast<Eigen::Index>(feats[0].size());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = feats[i][j];
    mu = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

void check_feature_sets(const std::vector<Embedding>& a, const std::vector<Embedding>& b,
                        const char* op) {
    if (a.size() < 2 || b.size() < 2)
        throw DataError(std::string(op) + " needs at least 2 samples per side, got " +
                        std::to_string(a.size()) + " and " + std::to_string(b.size()));
    const std::size_t d = a[0].size();
    if (d == 0) throw DataError(std::string(op) + ": empty feature vectors");
    for (const auto& v : a)
        if (v.size() != d) throw DataError(std::string(op) + ": ragged feature set");
    for (const auto& v : b)
        if (v.size() != d) throw DataError(std::string(op) + ": feature dimensions disagree");
}

}  // namespace

Embedding normalized(const Embedding& v) {
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (n < 1e-12) throw NumericError("cannot normalize a zero embedding");
    Embedding out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

double clip_real(const Embedding& x, const Embedding& t_p, const Embedding& t_n) {
    const double num = dot(x, t_p), den = dot(x, t_n);
    if (std::abs(den) < 1e-12)
        throw NumericError("CLIP-Real denominator x . t_n is zero; the negative anchor is "
                           "orthogonal to the embedding");
    return num / den;
}

Embedding HistogramEmbedder::embed(const VideoClip& clip, int t, int y0, int x0, int ph,
                                   int pw) const {
    if (t < 0 || t >= clip.T || y0 < 0 || x0 < 0 || ph < 1 || pw < 1 || y0 + ph > clip.H ||
        x0 + pw > clip.W)
        throw DataError("embedding rectangle leaves the frame");
    Embedding hist(kDims, 0.0);
    const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
    for (int y = y0; y < y0 + ph; ++y)
        for (int x = x0; x < x0 + pw; ++x) {
            for (int c = 0; c < 3; ++c)
                hist[c * 8 + color_bin(clip.at(t, y, x, c))] += 1.0;
            auto gray = [&](int yy, int xx) {
                return (clip.at(t, yy, xx, 0) + clip.at(t, yy, xx, 1) + clip.at(t, yy, xx, 2)) /
                       3.0f;
            };
            const float g = gray(y, x);
            const float gx = x + 1 < x0 + pw ? gray(y, x + 1) - g : 0.f;
            const float gy = y + 1 < y0 + ph ? gray(y + 1, x) - g : 0.f;
            const float mag = std::sqrt(gx * gx + gy * gy) * inv_sqrt2;  // -> [0, 1]
            hist[24 + color_bin(mag)] += 1.0;
        }
    return normalized(hist);
}

WarpResult backward_warp(const VideoClip& src, int t, const FlowField& flow, int step) {
    if (src.H != flow.H || src.W != flow.W)
        throw DataError("flow field is " + std::to_string(flow.H) + "x" + std::to_string(flow.W) +
                        " but the clip is " + std::to_string(src.H) + "x" +
                        std::to_string(src.W));
    if (t < 0 || t >= src.T || step < 0 || step >= flow.T)
        throw DataError("frame or flow step out of range");
    return warp_planes(src.frame(t), nullptr, src.H, src.W, flow, step);
}

double ssim(const float* a, const float* b, int H, int W, int channels,
            const std::uint8_t* valid) {
    static const std::vector<double> win = gaussian_window();
    if (H < 11 || W < 11) throw DataError("image too small for an 11x11 SSIM window");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

    double total = 0.0;
    long positions = 0;
    for (int y = 5; y < H - 5; ++y)
        for (int x = 5; x < W - 5; ++x) {
            if (valid) {
                bool ok = true;
                for (int i = -5; ok && i <= 5; ++i)
                    for (int j = -5; j <= 5; ++j)
                        if (!valid[(y + i) * W + (x + j)]) {
                            ok = false;
                            break;
                        }
                if (!ok) continue;
            }
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) {
                double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                for (int i = -5; i <= 5; ++i)
                    for (int j = -5; j <= 5; ++j) {
                        const double w = win[(i + 5) * 11 + (j + 5)];
                        const double va = a[((y + i) * W + (x + j)) * channels + c];
                        const double vb = b[((y + i) * W + (x + j)) * channels + c];
                        ma += w * va;
                        mb += w * vb;
                        maa += w * va * va;
                        mbb += w * vb * vb;
                        mab += w * va * vb;
                    }
                const double sa = maa - ma * ma, sb = mbb - mb * mb, sab = mab - ma * mb;
                acc += ((2.0 * ma * mb + C1) * (2.0 * sab + C2)) /
                       ((ma * ma + mb * mb + C1) * (sa + sb + C2));
            }
            total += acc / channels;
            ++positions;
        }
    if (positions == 0) throw DataError("no valid pixels for any full SSIM window");
    return total / positions;
}

double warp_ssim(const VideoClip& gen, const FlowField& flow, int window) {
    if (window < 1) throw ConfigError("warp_ssim window must be >= 1");
    if (gen.T < 2) throw DataError("warp_ssim needs at least 2 frames");
    if (flow.T != gen.T - 1)
        throw DataError("flow has " + std::to_string(flow.T) + " steps but a " +
                        std::to_string(gen.T) + "-frame clip needs " + std::to_string(gen.T - 1));
    if (flow.H != gen.H || flow.W != gen.W) throw DataError("flow and clip sizes disagree");

    std::vector<std::vector<std::uint8_t>> occl(flow.T);
    for (int s = 0; s < flow.T; ++s) occl[s] = unoccluded_sources(flow, s, gen.H, gen.W);

    double total = 0.0;
    long pairs = 0;
    for (int t = 0; t + 1 < gen.T; ++t)
        for (int d = 1; d <= window && t + d < gen.T; ++d) {
            // chain frame t+d back through steps t+d-1, ..., t, dropping
            // occluded positions at every hop
            WarpResult w = warp_planes(gen.frame(t + d), nullptr, gen.H, gen.W, flow, t + d - 1);
            for (std::size_t i = 0; i < w.valid.size(); ++i) w.valid[i] &= occl[t + d - 1][i];
            for (int s = t + d - 2; s >= t; --s) {
                w = warp_planes(w.rgb.data(), w.valid.data(), gen.H, gen.W, flow, s);
                for (std::size_t i = 0; i < w.valid.size(); ++i) w.valid[i] &= occl[s][i];
            }
            total += ssim(gen.frame(t), w.rgb.data(), gen.H, gen.W, 3, w.valid.data());
            ++pairs;
        }
    return total / pairs * 100.0;
}

PatchPairSet semantics_aware_pairs(const std::vector<VideoClip>& cg,
                                   const std::vector<VideoClip>& real,
                                   const PatchEmbedder& embedder, int p, int n_pairs,
                                   std::uint64_t seed) {
    if (n_pairs < 1) throw ConfigError("n_pairs must be >= 1, got " + std::to_string(n_pairs));
    if (p < 1) throw ConfigError("patch size must be >= 1, got " + std::to_string(p));
    std::vector<PatchRef> cg_pool = patch_grid(cg, p);
    std::vector<PatchRef> real_pool = patch_grid(real, p);
    if (cg_pool.empty()) throw DataError("no CG patches to sample from");
    if (real_pool.empty()) throw DataError("no real patches to match against");
    if (n_pairs > static_cast<int>(cg_pool.size()))
        throw DataError("n_pairs=" + std::to_string(n_pairs) + " exceeds the CG patch grid of " +
                        std::to_string(cg_pool.size()));

    std::vector<Embedding> real_emb(real_pool.size());
    for (std::size_t i = 0; i < real_pool.size(); ++i) {
        const PatchRef& r = real_pool[i];
        real_emb[i] = embedder.embed(real[r.clip], r.t, r.y0, r.x0, p, p);
    }

    // n_pairs distinct CG patches via a partial Fisher-Yates shuffle
    std::vector<std::uint32_t> order(cg_pool.size());
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(seed);
    PatchPairSet out;
    out.p = p;
    out.pairs.reserve(n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        const std::size_t j = i + rng.below(order.size() - i);
        std::swap(order[i], order[j]);
        const PatchRef& g = cg_pool[order[i]];
        Embedding e = embedder.embed(cg[g.clip], g.t, g.y0, g.x0, p, p);
        std::size_t best = 0;
        double best_dot = dot(e, real_emb[0]);
        for (std::size_t r = 1; r < real_emb.size(); ++r) {
            const double s = dot(e, real_emb[r]);
            if (s > best_dot) {  // ties keep the lowest pool index
                best_dot = s;
                best = r;
            }
        }
        out.pairs.emplace_back(g, real_pool[best]);
    }
    return out;
}

double fid(const std::vector<Embedding>& a, const std::vector<Embedding>& b) {
    check_feature_sets(a, b, "fid");
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    fit_gaussian(a, mu_a, cov_a);
    fit_gaussian(b, mu_b, cov_b);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(cov_a), eig_b(cov_b);
    if (eig_a.eigenvalues().minCoeff() < 1e-8 || eig_b.eigenvalues().minCoeff() < 1e-8) {
        std::fprintf(stderr, "fid: near-singular covariance, adding 1e-6 ridge to both sides\n");
        const Eigen::Index d = cov_a.rows();
        cov_a += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        cov_b += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        eig_a.compute(cov_a);
    }
    Eigen::VectorXd lam = eig_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_a =
        eig_a.eigenvectors() * lam.asDiagonal() * eig_a.eigenvectors().transpose();
    Eigen::MatrixXd m = sqrt_a * cov_b * sqrt_a;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_m(m);
    const double tr_sqrt = eig_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

double kid(const std::vector<Embedding>& a, const std::vector<Embedding>& b) {
    check_feature_sets(a, b, "kid");
    const double d = static_cast<double>(a[0].size());
    auto kernel = [d](const Embedding& x, const Embedding& y) {
        const double u = std::inner_product(x.begin(), x.end(), y.begin(), 0.0) / d + 1.0;
        return u * u * u;
    };
    const std::size_t m = a.size(), n = b.size();
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) xx += kernel(a[i], a[j]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) yy += kernel(b[i], b[j]);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) xy += kernel(a[i], b[j]);
    const double mmd2 = 2.0 * xx / (static_cast<double>(m) * (m - 1)) +
                        2.0 * yy / (static_cast<double>(n) * (n - 1)) -
                        2.0 * xy / (static_cast<double>(m) * n);
    return mmd2 * 100.0;
}

IoUReport mask_consistency(const VideoClip& gen, const MaskClip& gt, const std::string& palette) {
    if (palette != "toy")
        throw DataError("unknown palette '" + palette +
                        "'; only the built-in \"toy\" classifier is available");
    if (gen.T != gt.T || gen.H != gt.H || gen.W != gt.W)
        throw DataError("clip and mask shapes disagree");

    const int n_classes = palette_size() + 1;  // background + object colors
    std::vector<long> inter(n_classes, 0), pred_n(n_classes, 0), gt_n(n_classes, 0);
    for (int t = 0; t < gen.T; ++t)
        for (int y = 0; y < gen.H; ++y)
            for (int x = 0; x < gen.W; ++x) {
                int pred = 0;
                float best = 1e30f;
                for (int c = 0; c < n_classes; ++c) {
                    const float* pc = palette_color(c);
                    float dist = 0.f;
                    for (int ch = 0; ch < 3; ++ch) {
                        const float dclr = gen.at(t, y, x, ch) - pc[ch];
                        dist += dclr * dclr;
                    }
                    if (dist < best) {
                        best = dist;
                        pred = c;
                    }
                }
                const int id = gt.at(t, y, x);
                const int truth = id == 0 ? 0 : 1 + (id - 1) % palette_size();
                ++pred_n[pred];
                ++gt_n[truth];
                if (pred == truth) ++inter[pred];
            }

    IoUReport rep;
    rep.iou.assign(n_classes, 0.0);
    rep.present.assign(n_classes, 0);
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        const long uni = pred_n[c] + gt_n[c] - inter[c];
        if (uni == 0) continue;
        rep.present[c] = 1;
        rep.iou[c] = static_cast<double>(inter[c]) / uni;
        sum += rep.iou[c];
        ++present;
    }
    rep.miou = present ? sum / present : 0.0;
    return rep;
}

double mse(const VideoClip& a, const VideoClip& b) {
    if (a.T != b.T || a.H != b.H || a.W != b.W) throw DataError("clip shapes disagree");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double diff = static_cast<double>(a.data[i]) - b.data[i];
        acc += diff * diff;
    }
    return acc / a.data.size();
}

}  // namespace s2r
