#include "s2r/control.hpp"

#include "s2r/common.hpp"

namespace s2r {

using ad::Var;

void ControlConfig::validate(const DiTConfig& dit) const {
    if (N < 1) throw ConfigError("control: injection interval N must be >= 1");
    if (dit.depth % N != 0)
        throw ConfigError("control: denoiser depth " + std::to_string(dit.depth) +
                          " is not divisible by injection interval " + std::to_string(N));
    if (cond_dim < 1) throw ConfigError("control: cond_dim must be >= 1");
}

ControlBranch::ControlBranch(const DiT& dit, const ControlConfig& cfg, ParamStore& params,
                             Rng& rng, std::string prefix)
    : dit_(&dit), cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate(dit.config());
    const int W = dit.config().width;

    auto clone = [&](const std::string& name, const Var& src) {
        return params.add(prefix_ + name, src->val);
    };

    const auto& e = dit.token_embed();
    embed_.in_w = clone("in.w", e.in_w);
    embed_.in_b = clone("in.b", e.in_b);
    embed_.pos_spatial = clone("pos.spatial", e.pos_spatial);
    embed_.pos_temporal = clone("pos.temporal", e.pos_temporal);

    const auto& tm = dit.time_embed();
    time_.w1 = clone("time.w1", tm.w1);
    time_.b1 = clone("time.b1", tm.b1);
    time_.w2 = clone("time.w2", tm.w2);
    time_.b2 = clone("time.b2", tm.b2);
    time_.null_emb = clone("null", tm.null_emb);

    const int L_c = dit.config().depth / cfg_.N;
    for (int j = 0; j < L_c; ++j) {
        const std::string base = "block" + std::to_string(j) + ".";
        const detail::DiTBlock& src = dit.blocks()[static_cast<std::size_t>(j)];
        detail::DiTBlock b;
        b.temporal = src.temporal;
        b.mod_w = clone(base + "mod.w", src.mod_w);
        b.mod_b = clone(base + "mod.b", src.mod_b);
        b.wq = clone(base + "attn.wq", src.wq);
        b.bq = clone(base + "attn.bq", src.bq);
        b.wk = clone(base + "attn.wk", src.wk);
        b.bk = clone(base + "attn.bk", src.bk);
        b.wv = clone(base + "attn.wv", src.wv);
        b.bv = clone(base + "attn.bv", src.bv);
        b.wo = clone(base + "attn.wo", src.wo);
        b.bo = clone(base + "attn.bo", src.bo);
        b.w1 = clone(base + "mlp.w1", src.w1);
        b.b1 = clone(base + "mlp.b1", src.b1);
        b.w2 = clone(base + "mlp.w2", src.w2);
        b.b2 = clone(base + "mlp.b2", src.b2);
        blocks_.push_back(b);
    }

    cond_w_ = params.add(prefix_ + "cond.w", init_fanin({W, cfg_.cond_dim}, rng));
    cond_b_ = params.add(prefix_ + "cond.b", Tensor({W}));
    for (int j = 0; j < L_c; ++j) {
        emit_w_.push_back(params.add(prefix_ + "emit" + std::to_string(j) + ".w", Tensor({W, W})));
        emit_b_.push_back(params.add(prefix_ + "emit" + std::to_string(j) + ".b", Tensor({W})));
    }
}

std::vector<Var> ControlBranch::residuals(const Var& z_tokens, double t,
                                          const Var& cond_tokens) const {
    const DiTConfig& dcfg = dit_->config();
    if (cond_tokens->val.shape != std::vector<std::int64_t>{dcfg.tokens(), cfg_.cond_dim})
        throw DataError("control: condition tokens shaped " + cond_tokens->val.shape_str() +
                        ", expected [" + std::to_string(dcfg.tokens()) + "," +
                        std::to_string(cfg_.cond_dim) + "]");

    Var h = detail::embed_tokens(embed_, z_tokens, dcfg);
    h = ad::add(h, ad::linear(cond_tokens, cond_w_, cond_b_));
    Var c = detail::condition_vector(time_, t, dcfg);

    std::vector<Var> out;
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
        h = detail::dit_block_forward(h, c, blocks_[j], dcfg);
        out.push_back(ad::linear(h, emit_w_[j], emit_b_[j]));
    }
    return out;
}

namespace {

ad::Var condition_tokens_from(const ControlBranch& branch, const ad::Var& cond_grid) {
    const DiTConfig& dcfg = branch.base().config();
    const auto& sh = cond_grid->val.shape;
    if (sh.size() != 4 || sh[0] != dcfg.t_lat || sh[1] != dcfg.h || sh[2] != dcfg.w ||
        sh[3] != branch.config().cond_dim)
        throw DataError("control: condition grid " + cond_grid->val.shape_str() +
                        " does not match the token grid [" + std::to_string(dcfg.t_lat) + "," +
                        std::to_string(dcfg.h) + "," + std::to_string(dcfg.w) + "," +
                        std::to_string(branch.config().cond_dim) + "]");
    return ad::reshape(cond_grid,
                       {static_cast<std::int64_t>(dcfg.tokens()), branch.config().cond_dim});
}

}  // namespace

BoundCondition::BoundCondition(const ControlBranch& branch, const ConditionLatent& cond)
    : branch_(&branch) {
    Tensor t = cond.data;
    t.shape = {cond.T_lat, cond.h, cond.w, cond.D};
    cond_tokens_ = condition_tokens_from(branch, ad::constant(std::move(t)));
}

BoundCondition::BoundCondition(const ControlBranch& branch, const ad::Var& cond_grid)
    : branch_(&branch), cond_tokens_(condition_tokens_from(branch, cond_grid)) {}

std::vector<Var> BoundCondition::residuals(const Var& z_tokens, double t) const {
    return branch_->residuals(z_tokens, t, cond_tokens_);
}

}  // namespace s2r
