#pragma once

// Finite-difference gradient oracle shared by the unit tests and the
// acceptance harness.  Central differences at fp64.

#include <cmath>
#include <functional>
#include <vector>

#include "s2r/autograd.hpp"
#include "s2r/rng.hpp"

namespace s2r::testing {

struct FdReport {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline double rel_err(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
}

// build_loss() must construct a fresh graph over the SAME param nodes each
// call and return the scalar loss node.  Checks `per_param` coordinates of
// each param (first coord + random ones).
inline FdReport fd_check(const std::function<ad::Var()>& build_loss,
                         const std::vector<ad::Var>& params, Rng& rng, int per_param = 3,
                         double h = 1e-5) {
    for (auto& p : params) p->grad = Tensor{};
    ad::Var loss = build_loss();
    ad::backward(loss);
    std::vector<Tensor> analytic;
    for (auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }
    FdReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        const std::int64_t n = p->val.numel();
        for (int c = 0; c < per_param; ++c) {
            std::int64_t j = (c == 0) ? 0 : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
            const double orig = p->val[j];
            p->val[j] = orig + h;
            double fp = build_loss()->val[0];
            p->val[j] = orig - h;
            double fm = build_loss()->val[0];
            p->val[j] = orig;
            double num = (fp - fm) / (2.0 * h);
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[pi][j], num));
            ++rep.checked;
        }
    }
    for (auto& p : params) p->grad = Tensor{};
    return rep;
}

// Directional derivative along one random direction over ALL params at once:
// g.d vs central difference of the loss along d.  Unlike the per-coordinate
// probe this stays well conditioned on deep composite losses, where single
// coordinates can have gradients near the fd noise floor.
inline double directional_check(const std::function<ad::Var()>& build_loss,
                                const std::vector<ad::Var>& params, Rng& rng,
                                double h = 1e-6) {
    for (auto& p : params) p->grad = Tensor{};
    ad::Var loss = build_loss();
    ad::backward(loss);
    std::vector<Tensor> dir;
    double gd = 0.0;
    for (auto& p : params) {
        Tensor d = Tensor::randn(p->val.shape, rng, 1.0);
        p->ensure_grad();
        for (std::int64_t i = 0; i < d.numel(); ++i) gd += p->grad[i] * d[i];
        dir.push_back(std::move(d));
    }
    auto shift = [&](double s) {
        for (std::size_t k = 0; k < params.size(); ++k)
            for (std::int64_t i = 0; i < dir[k].numel(); ++i) params[k]->val[i] += s * dir[k][i];
    };
    shift(h);
    const double fp = build_loss()->val[0];
    shift(-2.0 * h);
    const double fm = build_loss()->val[0];
    shift(h);
    for (auto& p : params) p->grad = Tensor{};
    const double num = (fp - fm) / (2.0 * h);
    return std::fabs(gd - num) / std::max({std::fabs(gd), std::fabs(num), 1e-12});
}

}  // namespace s2r::testing
