#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2r/rng.hpp"
#include "s2r/scenegen.hpp"
#include "s2r/vfm.hpp"

namespace s2r {

// Global feature basis.  Fields are float32 so disk round-trips are
// bit-exact; fitting runs in double and casts once at the end.
struct PCABasis {
    int C = 0;
    int k_m = 0;
    std::uint64_t n_fitted = 0;
    std::vector<float> mean;         // [C]
    std::vector<float> components;   // [k_m, C], rows = descending eigenvalue order
    std::vector<float> eigenvalues;  // [k_m], non-increasing
};

struct ChannelMask {
    int k = 0;
    std::vector<std::uint8_t> bits;  // prefix of ones: bits[i] = 1 iff i < k
};

struct TailDropPolicy {
    std::vector<int> candidates;  // ordered, max == k_m
    std::vector<double> weights;  // empty = uniform
};

// Streaming mini-batch PCA: running mean plus an SVD rank update of each
// deflated batch (the classic incremental-PCA construction whose limit is
// exact batch PCA).
class IncrementalPCA {
public:
    IncrementalPCA(int C, int k_m, int batch_size = 256);
    void push(const float* row);              // one C-dim sample
    void push_grid(const FeatureGrid& grid);  // every (t,y,x) position is a sample
    PCABasis finalize();                      // flushes; errors if rows seen < k_m

private:
    void flush();
    int C_, k_m_, batch_size_;
    std::uint64_t n_ = 0;
    bool first_done_ = false;
    std::vector<double> mean_;        // [C]
    std::vector<double> sing_;        // [k_m]
    std::vector<double> comps_;      // [k_m, C]
    std::vector<double> buffer_;      // pending rows
};

// one uniformly random frame index per manifest row; deterministic in seed
std::vector<std::pair<std::string, int>> sample_fitting_frames(
    const std::vector<ManifestRow>& manifest, std::uint64_t seed);

// flip rows so the largest-|entry| coordinate is positive (ties -> lowest index)
PCABasis stabilize_signs(PCABasis basis);

// out[..., j] = components_j . (feat - mean); shape [T,h,w,k_m]
FeatureGrid project(const FeatureGrid& grid, const PCABasis& basis);

// divide channel j by sqrt(eigenvalue_j + 1e-6); separate switchable step
FeatureGrid whiten(const FeatureGrid& proj, const PCABasis& basis);

ChannelMask make_channel_mask(int k, int k_m);
ChannelMask sample_tail_drop(const TailDropPolicy& policy, Rng& rng);
FeatureGrid apply_mask(const FeatureGrid& proj, const ChannelMask& mask);

// magic PCAB, version u32, C u32, k_m u32, n_fitted u64, then float32 LE:
// mean[C], components[k_m*C], eigenvalues[k_m]
void save_basis(const PCABasis& basis, const std::string& path);
PCABasis load_basis(const std::string& path);

}  // namespace s2r
