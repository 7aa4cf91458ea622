#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "s2r/pca.hpp"
#include "s2r/rng.hpp"
#include "s2r/scenegen.hpp"
#include "s2r/vfm.hpp"

using namespace s2r;

namespace {

// exact batch PCA oracle on the same rows (double precision throughout)
struct BatchPCA {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;  // [k, C]
    Eigen::VectorXd eigenvalues;
};

BatchPCA batch_pca(const Eigen::MatrixXd& X, int k) {
    BatchPCA out;
    out.mean = X.colwise().mean();
    Eigen::MatrixXd Xc = X.rowwise() - out.mean.transpose();
    Eigen::MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(X.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const int C = static_cast<int>(X.cols());
    out.components.resize(k, C);
    out.eigenvalues.resize(k);
    for (int i = 0; i < k; ++i) {
        out.eigenvalues(i) = es.eigenvalues()(C - 1 - i);  // descending
        out.components.row(i) = es.eigenvectors().col(C - 1 - i).transpose();
    }
    return out;
}

// rows ~ N(0, R diag(spectrum) R^T)
Eigen::MatrixXd gaussian_rows(int n, const std::vector<double>& spectrum, std::uint64_t seed) {
    const int C = static_cast<int>(spectrum.size());
    Rng rng(seed);
    Eigen::MatrixXd G(C, C);
    for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j) G(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
    Eigen::MatrixXd R = qr.householderQ();
    Eigen::MatrixXd X(n, C);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < C; ++j) X(i, j) = rng.normal() * std::sqrt(spectrum[static_cast<std::size_t>(j)]);
    return X * R.transpose();
}

PCABasis fit_rows(const Eigen::MatrixXd& X, int k_m, int batch = 256) {
    IncrementalPCA ipca(static_cast<int>(X.cols()), k_m, batch);
    std::vector<float> row(static_cast<std::size_t>(X.cols()));
    for (int i = 0; i < X.rows(); ++i) {
        for (int j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = static_cast<float>(X(i, j));
        ipca.push(row.data());
    }
    return ipca.finalize();
}

double ortho_inf_norm(const PCABasis& b) {
    double worst = 0.0;
    for (int i = 0; i < b.k_m; ++i)
        for (int j = 0; j < b.k_m; ++j) {
            double dot = 0.0;
            for (int c = 0; c < b.C; ++c)
                dot += static_cast<double>(b.components[static_cast<std::size_t>(i) * b.C + c]) *
                       b.components[static_cast<std::size_t>(j) * b.C + c];
            worst = std::max(worst, std::fabs(dot - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

double component_angle(const PCABasis& b, const BatchPCA& oracle, int i) {
    double dot = 0.0;
    for (int c = 0; c < b.C; ++c)
        dot += static_cast<double>(b.components[static_cast<std::size_t>(i) * b.C + c]) * oracle.components(i, c);
    return std::acos(std::min(1.0, std::fabs(dot)));
}

VideoClip noise_clip(int T, int H, int W, std::uint64_t seed) {
    VideoClip c(T, H, W);
    Rng rng(seed);
    for (auto& v : c.data) v = static_cast<float>(rng.uniform());
    return c;
}

// mean + sum_{j<k} proj_j * comp_j, squared error vs original features
double recon_mse(const FeatureGrid& grid, const FeatureGrid& proj, const PCABasis& b, int k) {
    const std::size_t n = grid.data.size() / static_cast<std::size_t>(grid.C);
    double se = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < grid.C; ++c) {
            double rec = b.mean[static_cast<std::size_t>(c)];
            for (int j = 0; j < k; ++j)
                rec += static_cast<double>(proj.data[i * proj.C + j]) *
                       b.components[static_cast<std::size_t>(j) * b.C + c];
            double d = rec - grid.data[i * grid.C + c];
            se += d * d;
        }
    }
    return se / static_cast<double>(grid.data.size());
}

}  // namespace

TEST_SUITE("pca") {

TEST_CASE("incremental fit matches exact batch PCA on gapped spectra") {
    const std::vector<double> spectrum{10.0, 6.0, 3.0, 1.5, 0.1, 0.05, 0.02, 0.01};
    Eigen::MatrixXd X = gaussian_rows(10000, spectrum, 17);
    PCABasis b = fit_rows(X, 4);
    CHECK(ortho_inf_norm(b) < 1e-5);
    BatchPCA oracle = batch_pca(X, 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(component_angle(b, oracle, i) < 1e-3);
        CHECK(std::fabs(b.eigenvalues[static_cast<std::size_t>(i)] - oracle.eigenvalues(i)) /
                  oracle.eigenvalues(i) < 1e-2);
    }
    // eigenvalues descending
    for (int i = 1; i < b.k_m; ++i)
        CHECK(b.eigenvalues[static_cast<std::size_t>(i)] <= b.eigenvalues[static_cast<std::size_t>(i) - 1]);
    // mean agrees
    for (int c = 0; c < b.C; ++c)
        CHECK(std::fabs(b.mean[static_cast<std::size_t>(c)] - oracle.mean(c)) < 1e-5);
}

TEST_CASE("rank-2 data leaves trailing eigenvalues at numerical zero") {
    const std::vector<double> spectrum{5.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    Eigen::MatrixXd X = gaussian_rows(4000, spectrum, 23);
    PCABasis b = fit_rows(X, 4);
    CHECK(b.eigenvalues[2] < 1e-6 * b.eigenvalues[0]);
    CHECK(b.eigenvalues[3] < 1e-6 * b.eigenvalues[0]);
}

TEST_CASE("isotropic data spreads explained variance evenly") {
    const std::vector<double> spectrum(8, 1.0);
    Eigen::MatrixXd X = gaussian_rows(10000, spectrum, 31);
    PCABasis b = fit_rows(X, 8);
    double total = 0.0;
    for (float e : b.eigenvalues) total += e;
    for (float e : b.eigenvalues) CHECK(std::fabs(e / total - 1.0 / 8.0) < 0.0125);  // 10% of 1/C
}

TEST_CASE("single repeated row: zero eigenvalues, mean equals the row") {
    IncrementalPCA ipca(6, 3, 16);
    std::vector<float> row{1.f, -2.f, 0.5f, 3.f, 0.f, -1.f};
    for (int i = 0; i < 100; ++i) ipca.push(row.data());
    PCABasis b = ipca.finalize();
    for (int c = 0; c < 6; ++c) CHECK(b.mean[static_cast<std::size_t>(c)] == doctest::Approx(row[static_cast<std::size_t>(c)]).epsilon(1e-6));
    for (float e : b.eigenvalues) CHECK(std::fabs(e) < 1e-10);
}

TEST_CASE("too few rows is an error; non-finite input is an error") {
    IncrementalPCA ipca(4, 3, 8);
    std::vector<float> row{1.f, 2.f, 3.f, 4.f};
    ipca.push(row.data());
    ipca.push(row.data());
    CHECK_THROWS_AS(ipca.finalize(), DataError);
    IncrementalPCA ipca2(4, 3, 8);
    row[2] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(ipca2.push(row.data()), NumericError);
}

TEST_CASE("sign stabilization: examples and idempotence") {
    PCABasis b;
    b.C = 3;
    b.k_m = 2;
    b.mean = {0.f, 0.f, 0.f};
    b.components = {0.f, -0.8f, 0.6f, 0.6f, 0.8f, 0.f};
    b.eigenvalues = {2.f, 1.f};
    PCABasis s = stabilize_signs(b);
    CHECK(s.components[0] == 0.f);
    CHECK(s.components[1] == 0.8f);
    CHECK(s.components[2] == -0.6f);
    CHECK(s.components[3] == 0.6f);  // already positive -> unchanged
    CHECK(s.components[4] == 0.8f);
    CHECK(s.components[5] == 0.f);
    PCABasis ss = stabilize_signs(s);
    CHECK(ss.components == s.components);

    PCABasis zero = b;
    zero.components = {0.f, 0.f, 0.f, 1.f, 0.f, 0.f};
    CHECK_THROWS_AS(stabilize_signs(zero), NumericError);
}

TEST_CASE("sign stability across permuted fitting order") {
    const std::vector<double> spectrum{9.0, 4.0, 1.0, 0.25, 0.06, 0.01, 0.004, 0.001};
    Eigen::MatrixXd X = gaussian_rows(6000, spectrum, 41);
    PCABasis a = stabilize_signs(fit_rows(X, 4));
    // reverse row order
    Eigen::MatrixXd Y = X.colwise().reverse();
    PCABasis c = stabilize_signs(fit_rows(Y, 4));
    for (std::size_t i = 0; i < a.components.size(); ++i)
        CHECK(std::fabs(a.components[i] - c.components[i]) < 1e-3);
}

TEST_CASE("projection: centering, orthonormality, monotone reconstruction") {
    ToyVFM vfm(64);
    FeatureGrid train = extract_features(noise_clip(6, 64, 64, 51), vfm, 1);
    IncrementalPCA ipca(64, 32, 64);
    ipca.push_grid(train);
    PCABasis b = stabilize_signs(ipca.finalize());
    CHECK(ortho_inf_norm(b) < 1e-5);

    // feat = mean everywhere -> zero projection
    FeatureGrid constant(1, 2, 2, 64);
    for (int i = 0; i < 4; ++i)
        std::copy(b.mean.begin(), b.mean.end(), constant.data.begin() + i * 64);
    FeatureGrid p0 = project(constant, b);
    for (float v : p0.data) CHECK(std::fabs(v) < 1e-5);

    // feat = mean + components_0 -> e_0
    FeatureGrid shifted = constant;
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 64; ++c) shifted.data[static_cast<std::size_t>(i) * 64 + c] += b.components[static_cast<std::size_t>(c)];
    FeatureGrid p1 = project(shifted, b);
    for (int i = 0; i < 4; ++i) {
        CHECK(p1.data[static_cast<std::size_t>(i) * 32] == doctest::Approx(1.0).epsilon(1e-4));
        for (int j = 1; j < 32; ++j) CHECK(std::fabs(p1.data[static_cast<std::size_t>(i) * 32 + j]) < 1e-4);
    }

    // held-out clip: reconstruction MSE non-increasing in k over the candidate set
    FeatureGrid held = extract_features(noise_clip(2, 64, 64, 52), vfm, 1);
    FeatureGrid proj = project(held, b);
    double prev = std::numeric_limits<double>::infinity();
    for (int k : {3, 8, 16, 32}) {
        double mse = recon_mse(held, proj, b, k);
        CHECK(mse <= prev + 1e-12);
        prev = mse;
    }
}

TEST_CASE("mask/truncation equivalence") {
    ToyVFM vfm(64);
    FeatureGrid g = extract_features(noise_clip(4, 64, 64, 61), vfm, 1);
    IncrementalPCA ipca(64, 32, 128);
    ipca.push_grid(g);
    PCABasis b = stabilize_signs(ipca.finalize());
    FeatureGrid fresh = extract_features(noise_clip(2, 64, 64, 62), vfm, 1);
    FeatureGrid proj = project(fresh, b);
    for (int k : {3, 8, 16, 32}) {
        FeatureGrid masked = apply_mask(proj, make_channel_mask(k, 32));
        // truncated-basis oracle: project with first-k rows only, zero-pad
        PCABasis trunc = b;
        trunc.k_m = k;
        trunc.components.resize(static_cast<std::size_t>(k) * b.C);
        trunc.eigenvalues.resize(static_cast<std::size_t>(k));
        FeatureGrid tp = project(fresh, trunc);
        const std::size_t n = masked.data.size() / 32;
        for (std::size_t i = 0; i < n; ++i)
            for (int j = 0; j < 32; ++j) {
                float want = j < k ? tp.data[i * static_cast<std::size_t>(k) + j] : 0.f;
                CHECK(std::fabs(masked.data[i * 32 + j] - want) < 1e-6);
            }
    }
}

TEST_CASE("whitening scales channels by 1/sqrt(eigenvalue + 1e-6)") {
    PCABasis b;
    b.C = 4;
    b.k_m = 2;
    b.mean.assign(4, 0.f);
    b.components = {1.f, 0.f, 0.f, 0.f, 0.f, 1.f, 0.f, 0.f};
    b.eigenvalues = {3.f, 0.f};
    FeatureGrid proj(1, 1, 2, 2);
    proj.data = {2.f, 5.f, -1.f, 0.5f};
    FeatureGrid w = whiten(proj, b);
    CHECK(w.data[0] == doctest::Approx(2.0 / std::sqrt(3.0 + 1e-6)));
    CHECK(w.data[1] == doctest::Approx(5.0 / std::sqrt(1e-6)));
    CHECK(w.data[2] == doctest::Approx(-1.0 / std::sqrt(3.0 + 1e-6)));
}

TEST_CASE("tail drop sampling: membership, singleton, frequencies") {
    TailDropPolicy policy;
    policy.candidates = {3, 8, 16, 32};
    Rng rng(71);
    std::map<int, int> counts;
    bool members_ok = true, prefix_ok = true;
    for (int i = 0; i < 100000; ++i) {
        ChannelMask m = sample_tail_drop(policy, rng);
        members_ok &= (m.k == 3 || m.k == 8 || m.k == 16 || m.k == 32) && m.bits.size() == 32;
        for (int j = 0; j < 32; ++j) prefix_ok &= m.bits[static_cast<std::size_t>(j)] == (j < m.k ? 1 : 0);
        counts[m.k]++;
    }
    CHECK(members_ok);
    CHECK(prefix_ok);
    for (int k : policy.candidates)
        CHECK(std::fabs(counts[k] / 100000.0 - 0.25) < 0.01);

    TailDropPolicy single;
    single.candidates = {8};
    for (int i = 0; i < 10; ++i) CHECK(sample_tail_drop(single, rng).k == 8);

    CHECK_THROWS_AS(make_channel_mask(0, 32), ConfigError);
    CHECK_THROWS_AS(make_channel_mask(33, 32), ConfigError);
}

TEST_CASE("basis file round-trip, size law, corruption detection") {
    const std::vector<double> spectrum{4.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.02};
    Eigen::MatrixXd X = gaussian_rows(512, spectrum, 81);
    PCABasis b = stabilize_signs(fit_rows(X, 4, 64));
    auto path = (std::filesystem::temp_directory_path() / "s2r_pcab_test.bin").string();
    save_basis(b, path);
    CHECK(std::filesystem::file_size(path) ==
          24 + 4 * (static_cast<std::size_t>(b.C) + static_cast<std::size_t>(b.k_m) * b.C + b.k_m));
    PCABasis r = load_basis(path);
    CHECK(r.C == b.C);
    CHECK(r.k_m == b.k_m);
    CHECK(r.n_fitted == b.n_fitted);
    CHECK(r.mean == b.mean);
    CHECK(r.components == b.components);
    CHECK(r.eigenvalues == b.eigenvalues);

    // corrupt the magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_WITH_AS(load_basis(path), doctest::Contains(path.c_str()), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("fitting frame sampler: one per clip, uniform range, deterministic") {
    std::vector<ManifestRow> manifest;
    for (int i = 0; i < 6; ++i) manifest.push_back({"clip" + std::to_string(i), 20, 64, 64});
    auto a = sample_fitting_frames(manifest, 5);
    auto b = sample_fitting_frames(manifest, 5);
    REQUIRE(a.size() == 6);
    CHECK(a == b);
    for (auto& [id, f] : a) {
        CHECK(f >= 0);
        CHECK(f < 20);
    }
    std::vector<ManifestRow> ones{{"x", 1, 64, 64}, {"y", 1, 64, 64}};
    for (auto& [id, f] : sample_fitting_frames(ones, 9)) CHECK(f == 0);
    CHECK_THROWS_AS(sample_fitting_frames({}, 1), DataError);
}

}  // TEST_SUITE
