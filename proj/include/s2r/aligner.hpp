#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s2r/nn.hpp"
#include "s2r/pca.hpp"

namespace s2r {

struct AlignerConfig {
    int S = 4;               // input grid oversampling factor
    int in_channels = 32;    // masked feature coordinates per position
    int hidden = 64;
    int out_channels = 128;  // condition token width D
    int temporal_ratio = 4;  // r_t: frames per condition step (first frame kept)
    int temporal_kernel = 5; // taps per causal temporal convolution

    void validate() const;
};

// Condition grid on the token timeline: [T_lat, H/16, W/16, D] with
// T_lat = 1 + (T-1)/r_t.  Row-major flattening is exactly the t-major token
// order the denoiser uses.
struct ConditionLatent {
    int T_lat = 0, h = 0, w = 0, D = 0;
    Tensor data;
};

// Inclusive interval of input frames that can influence condition frame tau.
// Exact for the two-block aggregator below: a strided causal convolution
// (kernel k, stride r, left zero pad k-1) reaches frames [u*r-k+1, u*r], and
// the stride-1 block on top widens the window to block-1 outputs
// [tau-k+1, tau].  Valid for any tau with tau*r_t <= T-1.
std::pair<int, int> causal_receptive_field(const AlignerConfig& cfg, int tau);

// Collapses the S-times oversampled feature grid to the H/16 x W/16 token
// grid and downsamples time causally.
//
// Spatial path, applied per frame: max(1, log2 S) stages of a 3x3
// convolution (stride 2, or stride 1 when S=1) followed by one residual
// block (conv-groupnorm-SiLU-conv with skip).  Temporal path: two causal
// convolution blocks over the frame axis, the first with stride r_t, each
// conv-groupnorm-SiLU (the second with an identity skip).  A zero-initialized
// pointwise projection maps to D, so the condition signal starts at exactly
// zero and the downstream control branch is a no-op until training moves it.
class Aligner {
public:
    Aligner(const AlignerConfig& cfg, ParamStore& params, Rng& rng,
            std::string prefix = "aligner.");

    // grid: [T, h*S, w*S, in_channels] -> [T_lat, h, w, D].
    ad::Var forward(const ad::Var& grid) const;

    ConditionLatent run(const FeatureGrid& grid) const;

    const AlignerConfig& config() const { return cfg_; }
    int spatial_stages() const { return static_cast<int>(stages_.size()); }
    const std::string& prefix() const { return prefix_; }

private:
    struct ResBlock {
        ad::Var w1, b1, gn1_g, gn1_b, w2, b2;
    };
    struct SpatialStage {
        ad::Var down_w, down_b;
        ResBlock res;
    };
    struct TemporalBlock {
        ad::Var w, b, gn_g, gn_b;
        int stride = 1;
    };

    AlignerConfig cfg_;
    std::string prefix_;
    std::vector<SpatialStage> stages_;
    std::vector<TemporalBlock> temporal_;
    ad::Var proj_w_, proj_b_;
};

// [T,h,w,C] float grid -> fp64 tensor of the same layout
Tensor grid_to_tensor(const FeatureGrid& grid);

}  // namespace s2r
