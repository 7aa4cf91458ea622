#pragma once

#include <string>
#include <vector>

#include "s2r/aligner.hpp"
#include "s2r/dit.hpp"

namespace s2r {

struct ControlConfig {
    int N = 2;          // inject after every N denoiser blocks; branch depth = depth/N
    int cond_dim = 64;  // channel width of the incoming condition latent

    void validate(const DiTConfig& dit) const;
};

// Conditioning branch: the first depth/N denoiser blocks, value-copied at
// construction, run on the same noisy tokens and timestep as the base model
// with the condition stream added on top.  After branch block j a
// zero-initialized projection emits residual j, so the controlled model is
// exactly the base model until training moves the emission weights.
class ControlBranch {
public:
    ControlBranch(const DiT& dit, const ControlConfig& cfg, ParamStore& params, Rng& rng,
                  std::string prefix = "ctrl.");

    // z_tokens: [tokens, D_z]; cond_tokens: [tokens, cond_dim]
    std::vector<ad::Var> residuals(const ad::Var& z_tokens, double t,
                                   const ad::Var& cond_tokens) const;

    int depth() const { return static_cast<int>(blocks_.size()); }
    const ControlConfig& config() const { return cfg_; }
    const DiT& base() const { return *dit_; }
    const std::string& prefix() const { return prefix_; }
    const std::vector<detail::DiTBlock>& blocks() const { return blocks_; }

private:
    const DiT* dit_;
    ControlConfig cfg_;
    std::string prefix_;
    detail::TokenEmbed embed_;
    detail::TimeEmbed time_;
    std::vector<detail::DiTBlock> blocks_;
    ad::Var cond_w_, cond_b_;
    std::vector<ad::Var> emit_w_, emit_b_;
};

// Binds a branch to one condition grid so it can stand in wherever the
// denoiser expects a residual provider.  The Var overload keeps the graph
// alive, so gradients reach whatever produced the condition.
class BoundCondition final : public ResidualProvider {
public:
    BoundCondition(const ControlBranch& branch, const ConditionLatent& cond);
    BoundCondition(const ControlBranch& branch, const ad::Var& cond_grid);  // [T_lat,h,w,D]

    std::vector<ad::Var> residuals(const ad::Var& z_tokens, double t) const override;

private:
    const ControlBranch* branch_;
    ad::Var cond_tokens_;
};

}  // namespace s2r
