#include "s2r/pca.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>

namespace s2r {

using Eigen::MatrixXd;
using Eigen::VectorXd;

IncrementalPCA::IncrementalPCA(int C, int k_m, int batch_size)
    : C_(C), k_m_(k_m), batch_size_(batch_size) {
    if (C < 1 || k_m < 1 || k_m > C) throw ConfigError("pca: need 1 <= k_m <= C");
    if (batch_size < 1) throw ConfigError("pca: batch_size must be >= 1");
    mean_.assign(static_cast<std::size_t>(C), 0.0);
    sing_.assign(static_cast<std::size_t>(k_m), 0.0);
    comps_.assign(static_cast<std::size_t>(k_m) * C, 0.0);
}

void IncrementalPCA::push(const float* row) {
    for (int j = 0; j < C_; ++j) {
        if (!std::isfinite(row[j])) throw NumericError("pca: non-finite input row");
        buffer_.push_back(static_cast<double>(row[j]));
    }
    // the first SVD needs at least k_m rows; afterwards any batch size works
    const std::size_t rows = buffer_.size() / static_cast<std::size_t>(C_);
    if (rows >= static_cast<std::size_t>(batch_size_) &&
        (first_done_ || rows >= static_cast<std::size_t>(k_m_)))
        flush();
}

void IncrementalPCA::push_grid(const FeatureGrid& grid) {
    if (grid.C != C_) throw DataError("pca: grid channel mismatch");
    const std::size_t n = grid.data.size() / static_cast<std::size_t>(C_);
    for (std::size_t i = 0; i < n; ++i) push(grid.data.data() + i * C_);
}

void IncrementalPCA::flush() {
    const std::int64_t m = static_cast<std::int64_t>(buffer_.size()) / C_;
    if (m == 0) return;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        buffer_.data(), m, C_);
    VectorXd batch_mean = X.colwise().mean();
    Eigen::Map<VectorXd> mu(mean_.data(), C_);

    MatrixXd stacked;
    if (!first_done_) {
        stacked = X.rowwise() - batch_mean.transpose();
        mu = batch_mean;
    } else {
        const double n_old = static_cast<double>(n_);
        const double n_new = n_old + static_cast<double>(m);
        VectorXd corr = std::sqrt(n_old * static_cast<double>(m) / n_new) * (mu - batch_mean);
        stacked.resize(k_m_ + m + 1, C_);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Q(
            comps_.data(), k_m_, C_);
        for (int i = 0; i < k_m_; ++i) stacked.row(i) = sing_[static_cast<std::size_t>(i)] * Q.row(i);
        stacked.middleRows(k_m_, m) = X.rowwise() - batch_mean.transpose();
        stacked.row(k_m_ + m) = corr.transpose();
        mu = (n_old * mu + static_cast<double>(m) * batch_mean) / n_new;
    }

    Eigen::BDCSVD<MatrixXd> svd(stacked, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const auto& V = svd.matrixV();  // [C, rank]
    for (int i = 0; i < k_m_; ++i) {
        sing_[static_cast<std::size_t>(i)] = i < s.size() ? s(i) : 0.0;
        for (int j = 0; j < C_; ++j)
            comps_[static_cast<std::size_t>(i) * C_ + j] = i < V.cols() ? V(j, i) : (i == j ? 1.0 : 0.0);
    }
    n_ += static_cast<std::uint64_t>(m);
    first_done_ = true;
    buffer_.clear();
}

PCABasis IncrementalPCA::finalize() {
    const std::size_t pending = buffer_.size() / static_cast<std::size_t>(C_);
    if (!first_done_ && pending < static_cast<std::size_t>(k_m_))
        throw DataError("pca: fewer rows than k_m (" +
                        std::to_string(n_ + pending) + " < " + std::to_string(k_m_) + ")");
    flush();
    PCABasis b;
    b.C = C_;
    b.k_m = k_m_;
    b.n_fitted = n_;
    b.mean.resize(static_cast<std::size_t>(C_));
    for (int j = 0; j < C_; ++j) b.mean[static_cast<std::size_t>(j)] = static_cast<float>(mean_[static_cast<std::size_t>(j)]);
    b.components.resize(static_cast<std::size_t>(k_m_) * C_);
    for (std::size_t i = 0; i < b.components.size(); ++i)
        b.components[i] = static_cast<float>(comps_[i]);
    b.eigenvalues.resize(static_cast<std::size_t>(k_m_));
    const double denom = n_ > 1 ? static_cast<double>(n_ - 1) : 1.0;
    for (int i = 0; i < k_m_; ++i)
        b.eigenvalues[static_cast<std::size_t>(i)] =
            static_cast<float>(sing_[static_cast<std::size_t>(i)] * sing_[static_cast<std::size_t>(i)] / denom);
    return b;
}

std::vector<std::pair<std::string, int>> sample_fitting_frames(
    const std::vector<ManifestRow>& manifest, std::uint64_t seed) {
    if (manifest.empty()) throw DataError("pca: empty manifest");
    Rng rng(seed);
    std::vector<std::pair<std::string, int>> out;
    out.reserve(manifest.size());
    for (const auto& row : manifest) {
        if (row.T < 1) throw DataError("pca: manifest row with T < 1: " + row.clip_id);
        out.emplace_back(row.clip_id, static_cast<int>(rng.below(static_cast<std::uint64_t>(row.T))));
    }
    return out;
}

PCABasis stabilize_signs(PCABasis basis) {
    for (int i = 0; i < basis.k_m; ++i) {
        float* row = basis.components.data() + static_cast<std::size_t>(i) * basis.C;
        int arg = 0;
        float best = 0.f;
        for (int j = 0; j < basis.C; ++j) {
            float a = std::fabs(row[j]);
            if (a > best) {  // strict: ties keep the lowest index
                best = a;
                arg = j;
            }
        }
        if (best == 0.f) throw NumericError("pca: zero basis row " + std::to_string(i));
        if (row[arg] < 0.f)
            for (int j = 0; j < basis.C; ++j) row[j] = -row[j];
    }
    return basis;
}

FeatureGrid project(const FeatureGrid& grid, const PCABasis& basis) {
    if (grid.C != basis.C) throw DataError("pca project: channel mismatch");
    FeatureGrid out(grid.T, grid.h, grid.w, basis.k_m);
    out.scale_S = grid.scale_S;
    const std::size_t n = grid.data.size() / static_cast<std::size_t>(grid.C);
    for (std::size_t i = 0; i < n; ++i) {
        const float* f = grid.data.data() + i * grid.C;
        float* o = out.data.data() + i * basis.k_m;
        for (int r = 0; r < basis.k_m; ++r) {
            const float* comp = basis.components.data() + static_cast<std::size_t>(r) * basis.C;
            double acc = 0.0;
            for (int j = 0; j < basis.C; ++j)
                acc += static_cast<double>(comp[j]) * (static_cast<double>(f[j]) - basis.mean[static_cast<std::size_t>(j)]);
            o[r] = static_cast<float>(acc);
        }
    }
    return out;
}

FeatureGrid whiten(const FeatureGrid& proj, const PCABasis& basis) {
    if (proj.C != basis.k_m) throw DataError("pca whiten: channel mismatch");
    FeatureGrid out = proj;
    std::vector<float> inv(static_cast<std::size_t>(basis.k_m));
    for (int r = 0; r < basis.k_m; ++r)
        inv[static_cast<std::size_t>(r)] =
            static_cast<float>(1.0 / std::sqrt(static_cast<double>(basis.eigenvalues[static_cast<std::size_t>(r)]) + 1e-6));
    const std::size_t n = out.data.size() / static_cast<std::size_t>(out.C);
    for (std::size_t i = 0; i < n; ++i) {
        float* o = out.data.data() + i * out.C;
        for (int r = 0; r < out.C; ++r) o[r] *= inv[static_cast<std::size_t>(r)];
    }
    return out;
}

ChannelMask make_channel_mask(int k, int k_m) {
    if (k < 1 || k > k_m) throw ConfigError("channel mask: need 1 <= k <= k_m, got k=" +
                                            std::to_string(k) + ", k_m=" + std::to_string(k_m));
    ChannelMask m;
    m.k = k;
    m.bits.assign(static_cast<std::size_t>(k_m), 0);
    for (int i = 0; i < k; ++i) m.bits[static_cast<std::size_t>(i)] = 1;
    return m;
}

ChannelMask sample_tail_drop(const TailDropPolicy& policy, Rng& rng) {
    if (policy.candidates.empty()) throw ConfigError("tail drop: empty candidate set");
    int k_m = policy.candidates.back();
    for (int k : policy.candidates)
        if (k < 1 || k > k_m) throw ConfigError("tail drop: candidates must be in [1, max]");
    std::size_t idx;
    if (policy.weights.empty()) {
        idx = static_cast<std::size_t>(rng.below(policy.candidates.size()));
    } else {
        if (policy.weights.size() != policy.candidates.size())
            throw ConfigError("tail drop: weights size mismatch");
        double total = 0.0;
        for (double w : policy.weights) total += w;
        double u = rng.uniform() * total, cum = 0.0;
        idx = policy.weights.size() - 1;
        for (std::size_t i = 0; i < policy.weights.size(); ++i) {
            cum += policy.weights[i];
            if (u < cum) {
                idx = i;
                break;
            }
        }
    }
    return make_channel_mask(policy.candidates[idx], k_m);
}

FeatureGrid apply_mask(const FeatureGrid& proj, const ChannelMask& mask) {
    if (static_cast<std::size_t>(proj.C) != mask.bits.size())
        throw DataError("apply_mask: mask length mismatch");
    FeatureGrid out = proj;
    const std::size_t n = out.data.size() / static_cast<std::size_t>(out.C);
    for (std::size_t i = 0; i < n; ++i) {
        float* o = out.data.data() + i * out.C;
        for (int r = 0; r < out.C; ++r)
            if (!mask.bits[static_cast<std::size_t>(r)]) o[r] = 0.f;
    }
    return out;
}

void save_basis(const PCABasis& basis, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os.write("PCAB", 4);
    std::uint32_t version = 1, C = static_cast<std::uint32_t>(basis.C),
                  k_m = static_cast<std::uint32_t>(basis.k_m);
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&C), 4);
    os.write(reinterpret_cast<const char*>(&k_m), 4);
    os.write(reinterpret_cast<const char*>(&basis.n_fitted), 8);
    auto put = [&](const std::vector<float>& v) {
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(float)));
    };
    put(basis.mean);
    put(basis.components);
    put(basis.eigenvalues);
    if (!os) throw DataError("basis write failed: " + path);
}

PCABasis load_basis(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open basis: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PCAB", 4) != 0)
        throw DataError("bad basis magic: " + path);
    std::uint32_t version = 0, C = 0, k_m = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&C), 4);
    is.read(reinterpret_cast<char*>(&k_m), 4);
    if (version != 1) throw DataError("unsupported basis version in " + path);
    PCABasis b;
    is.read(reinterpret_cast<char*>(&b.n_fitted), 8);
    if (!is || C < 1 || k_m < 1 || k_m > C) throw DataError("bad basis header: " + path);
    b.C = static_cast<int>(C);
    b.k_m = static_cast<int>(k_m);
    b.mean.resize(C);
    b.components.resize(static_cast<std::size_t>(k_m) * C);
    b.eigenvalues.resize(k_m);
    auto get = [&](std::vector<float>& v) {
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(float)));
    };
    get(b.mean);
    get(b.components);
    get(b.eigenvalues);
    if (!is) throw DataError("basis truncated: " + path);
    return b;
}

}  // namespace s2r
