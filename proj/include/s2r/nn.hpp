#pragma once

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "s2r/autograd.hpp"
#include "s2r/common.hpp"
#include "s2r/rng.hpp"

namespace s2r {

// Ordered, named collection of trainable leaves.  Names are stable and used
// for checkpoints, weight copying (denoiser -> branch) and hashing.
class ParamStore {
public:
    ad::Var add(const std::string& name, Tensor init, bool trainable = true) {
        if (index_.count(name)) throw std::logic_error("duplicate param: " + name);
        ad::Var v = ad::leaf(std::move(init), name);
        v->requires_grad = trainable;
        index_[name] = params_.size();
        params_.push_back(v);
        return v;
    }

    ad::Var find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::logic_error("no such param: " + name);
        return params_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<ad::Var>& all() const { return params_; }

    void set_trainable(bool t) {
        for (auto& p : params_) p->requires_grad = t;
    }

    std::int64_t count_scalars() const {
        std::int64_t n = 0;
        for (auto& p : params_) n += p->val.numel();
        return n;
    }

    // order- and name-sensitive content hash
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (auto& p : params_) {
            h = fnv1a(p->name.data(), p->name.size(), h);
            h = fnv1a(p->val.data.data(), p->val.data.size() * sizeof(double), h);
        }
        return h;
    }

private:
    std::vector<ad::Var> params_;
    std::map<std::string, std::size_t> index_;
};

// ---- init helpers ----

inline Tensor init_normal(std::vector<std::int64_t> shape, Rng& rng, double stddev) {
    return Tensor::randn(std::move(shape), rng, stddev);
}

// fan-in scaled init for linear/conv weights
inline Tensor init_fanin(std::vector<std::int64_t> shape, Rng& rng) {
    std::int64_t fan = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
    return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan)));
}

// ---- Adam ----

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Adam {
public:
    Adam(std::vector<ad::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p->val.shape);
            v_.emplace_back(p->val.shape);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->grad = Tensor{};
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            const bool has_grad = !p->grad.data.empty();
            for (std::int64_t j = 0; j < p->val.numel(); ++j) {
                double g = has_grad ? p->grad[j] : 0.0;
                if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p->val[j];
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mh = m_[i][j] / bc1;
                const double vh = v_[i][j] / bc2;
                p->val[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }

    std::int64_t step_count() const { return t_; }

    // checkpoint access
    const std::vector<Tensor>& m_state() const { return m_; }
    const std::vector<Tensor>& v_state() const { return v_; }
    std::vector<Tensor>& m_state() { return m_; }
    std::vector<Tensor>& v_state() { return v_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    const std::vector<ad::Var>& params() const { return params_; }

private:
    std::vector<ad::Var> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace s2r
