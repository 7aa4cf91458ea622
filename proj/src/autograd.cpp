#include "s2r/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace s2r::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

static void check(bool ok, const char* msg) {
    if (!ok) throw std::logic_error(std::string("autograd: ") + msg);
}

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = false;
    return n;
}

Var leaf(Tensor v, std::string name) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

static Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(bp);
    return n;
}

void backward(const Var& root) {
    check(root->val.numel() == 1, "backward root must be scalar");
    // iterative reverse topological order
    std::vector<Node*> order;
    std::unordered_set<Node*> done;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (!n->requires_grad || done.count(n)) {
            stack.pop_back();
            continue;
        }
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (!done.count(p) && p->requires_grad) stack.push_back({p, 0});
        } else {
            done.insert(n);
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
    }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    check(same_shape(a->val, b->val), "add shape mismatch");
    Tensor y = a->val;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += b->val[i];
    return make(std::move(y), {a, b}, [pa = a.get(), pb = b.get()](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check(same_shape(a->val, b->val), "sub shape mismatch");
    Tensor y = a->val;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] -= b->val[i];
    return make(std::move(y), {a, b}, [pa = a.get(), pb = b.get()](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check(same_shape(a->val, b->val), "mul shape mismatch");
    Tensor y = a->val;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= b->val[i];
    return make(std::move(y), {a, b}, [pa = a.get(), pb = b.get()](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] * pb->val[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] += n.grad[i] * pa->val[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor y = a->val;
    for (auto& v : y.data) v *= c;
    return make(std::move(y), {a}, [pa = a.get(), c](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += c * n.grad[i];
    });
}

Var add_const(const Var& a, double c) {
    Tensor y = a->val;
    for (auto& v : y.data) v += c;
    return make(std::move(y), {a}, [pa = a.get()](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
    });
}

Var silu(const Var& a) {
    Tensor y = a->val;
    for (auto& v : y.data) v = v / (1.0 + std::exp(-v));
    return make(std::move(y), {a}, [pa = a.get()](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = pa->val[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            pa->grad[i] += n.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Var mul_scalar_param(const Var& x, const Var& s) {
    check(s->val.numel() == 1, "mul_scalar_param: s must be [1]");
    double c = s->val[0];
    Tensor y = x->val;
    for (auto& v : y.data) v *= c;
    return make(std::move(y), {x, s}, [px = x.get(), ps = s.get(), c](Node& n) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) px->grad[i] += c * n.grad[i];
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            double acc = 0.0;
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) acc += n.grad[i] * px->val[i];
            ps->grad[0] += acc;
        }
    });
}

// ---------------- shape ----------------

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    check(Tensor::numel_of(shape) == a->val.numel(), "reshape numel mismatch");
    Tensor y = a->val;
    y.shape = std::move(shape);
    return make(std::move(y), {a}, [pa = a.get()](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
    });
}

static std::vector<std::int64_t> strides_of(const std::vector<std::int64_t>& shape) {
    std::vector<std::int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
    return st;
}

Var permute(const Var& a, const std::vector<int>& perm) {
    const auto& ish = a->val.shape;
    check(perm.size() == ish.size(), "permute rank mismatch");
    std::vector<std::int64_t> osh(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) osh[i] = ish[perm[i]];
    auto istr = strides_of(ish);
    Tensor y(osh);
    const std::int64_t n = y.numel();
    const int r = static_cast<int>(perm.size());
    // walk output indices, gather from input
    std::vector<std::int64_t> idx(r, 0);
    for (std::int64_t o = 0; o < n; ++o) {
        std::int64_t src = 0;
        for (int d = 0; d < r; ++d) src += idx[d] * istr[perm[d]];
        y[o] = a->val[src];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[d] < osh[d]) break;
            idx[d] = 0;
        }
    }
    return make(std::move(y), {a}, [pa = a.get(), perm, osh, istr](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const int r = static_cast<int>(perm.size());
        std::vector<std::int64_t> idx(r, 0);
        for (std::int64_t o = 0; o < n.grad.numel(); ++o) {
            std::int64_t src = 0;
            for (int d = 0; d < r; ++d) src += idx[d] * istr[perm[d]];
            pa->grad[src] += n.grad[o];
            for (int d = r - 1; d >= 0; --d) {
                if (++idx[d] < osh[d]) break;
                idx[d] = 0;
            }
        }
    });
}

Var slice_cols(const Var& a, std::int64_t off, std::int64_t len) {
    check(a->val.rank() == 2, "slice_cols wants [n,d]");
    const std::int64_t n = a->val.dim(0), d = a->val.dim(1);
    check(off >= 0 && off + len <= d, "slice_cols out of range");
    Tensor y({n, len});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < len; ++j) y[i * len + j] = a->val[i * d + off + j];
    return make(std::move(y), {a}, [pa = a.get(), off, len, d](Node& nd) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const std::int64_t n = nd.grad.dim(0);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < len; ++j)
                pa->grad[i * d + off + j] += nd.grad[i * len + j];
    });
}

// ---------------- row broadcasts ----------------

Var add_row(const Var& x, const Var& r) {
    check(x->val.rank() == 2 && r->val.rank() == 2 && r->val.dim(0) == 1 &&
              r->val.dim(1) == x->val.dim(1),
          "add_row shapes");
    const std::int64_t n = x->val.dim(0), d = x->val.dim(1);
    Tensor y = x->val;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) y[i * d + j] += r->val[j];
    return make(std::move(y), {x, r}, [px = x.get(), pr = r.get(), n, d](Node& nd) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < n * d; ++i) px->grad[i] += nd.grad[i];
        }
        if (pr->requires_grad) {
            pr->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j) pr->grad[j] += nd.grad[i * d + j];
        }
    });
}

Var mul_row(const Var& x, const Var& r) {
    check(x->val.rank() == 2 && r->val.rank() == 2 && r->val.dim(0) == 1 &&
              r->val.dim(1) == x->val.dim(1),
          "mul_row shapes");
    const std::int64_t n = x->val.dim(0), d = x->val.dim(1);
    Tensor y = x->val;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) y[i * d + j] *= r->val[j];
    return make(std::move(y), {x, r}, [px = x.get(), pr = r.get(), n, d](Node& nd) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    px->grad[i * d + j] += nd.grad[i * d + j] * pr->val[j];
        }
        if (pr->requires_grad) {
            pr->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    pr->grad[j] += nd.grad[i * d + j] * px->val[i * d + j];
        }
    });
}

Var add_tile_rows(const Var& x, const Var& p) {
    check(x->val.rank() == 2 && p->val.rank() == 2 && x->val.dim(1) == p->val.dim(1) &&
              x->val.dim(0) % p->val.dim(0) == 0,
          "add_tile_rows shapes");
    const std::int64_t n = x->val.dim(0), d = x->val.dim(1), m = p->val.dim(0);
    Tensor y = x->val;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* src = p->val.ptr() + (i % m) * d;
        for (std::int64_t j = 0; j < d; ++j) y[i * d + j] += src[j];
    }
    return make(std::move(y), {x, p}, [px = x.get(), pp = p.get(), n, d, m](Node& nd) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < n * d; ++i) px->grad[i] += nd.grad[i];
        }
        if (pp->requires_grad) {
            pp->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                double* dst = pp->grad.ptr() + (i % m) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += nd.grad[i * d + j];
            }
        }
    });
}

Var add_repeat_rows(const Var& x, const Var& p) {
    check(x->val.rank() == 2 && p->val.rank() == 2 && x->val.dim(1) == p->val.dim(1) &&
              x->val.dim(0) % p->val.dim(0) == 0,
          "add_repeat_rows shapes");
    const std::int64_t n = x->val.dim(0), d = x->val.dim(1), t = p->val.dim(0);
    const std::int64_t m = n / t;
    Tensor y = x->val;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* src = p->val.ptr() + (i / m) * d;
        for (std::int64_t j = 0; j < d; ++j) y[i * d + j] += src[j];
    }
    return make(std::move(y), {x, p}, [px = x.get(), pp = p.get(), n, d, m](Node& nd) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < n * d; ++i) px->grad[i] += nd.grad[i];
        }
        if (pp->requires_grad) {
            pp->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                double* dst = pp->grad.ptr() + (i / m) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += nd.grad[i * d + j];
            }
        }
    });
}

// ---------------- linear algebra ----------------

Var linear(const Var& x, const Var& w, const Var& b) {
    check(x->val.rank() == 2 && w->val.rank() == 2 && x->val.dim(1) == w->val.dim(1),
          "linear shapes");
    const std::int64_t n = x->val.dim(0), din = x->val.dim(1), dout = w->val.dim(0);
    Tensor y({n, dout});
    {
        CMatMap X(x->val.ptr(), n, din), W(w->val.ptr(), dout, din);
        MatMap Y(y.ptr(), n, dout);
        Y.noalias() = X * W.transpose();
    }
    if (b) {
        check(b->val.numel() == dout, "linear bias shape");
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t o = 0; o < dout; ++o) y[i * dout + o] += b->val[o];
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make(std::move(y), std::move(parents),
                [px = x.get(), pw = w.get(), pb = b ? b.get() : nullptr, n, din, dout](Node& nd) {
                    CMatMap G(nd.grad.ptr(), n, dout);
                    if (px->requires_grad) {
                        px->ensure_grad();
                        CMatMap W(pw->val.ptr(), dout, din);
                        MatMap DX(px->grad.ptr(), n, din);
                        DX.noalias() += G * W;
                    }
                    if (pw->requires_grad) {
                        pw->ensure_grad();
                        CMatMap X(px->val.ptr(), n, din);
                        MatMap DW(pw->grad.ptr(), dout, din);
                        DW.noalias() += G.transpose() * X;
                    }
                    if (pb && pb->requires_grad) {
                        pb->ensure_grad();
                        for (std::int64_t i = 0; i < n; ++i)
                            for (std::int64_t o = 0; o < dout; ++o)
                                pb->grad[o] += nd.grad[i * dout + o];
                    }
                });
}

Var bmm_nn(const Var& a, const Var& b) {
    check(a->val.rank() == 3 && b->val.rank() == 3 && a->val.dim(0) == b->val.dim(0) &&
              a->val.dim(2) == b->val.dim(1),
          "bmm_nn shapes");
    const std::int64_t B = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2), n = b->val.dim(2);
    Tensor y({B, m, n});
    for (std::int64_t q = 0; q < B; ++q) {
        CMatMap A(a->val.ptr() + q * m * k, m, k), Bm(b->val.ptr() + q * k * n, k, n);
        MatMap Y(y.ptr() + q * m * n, m, n);
        Y.noalias() = A * Bm;
    }
    return make(std::move(y), {a, b}, [pa = a.get(), pb = b.get(), B, m, k, n](Node& nd) {
        for (std::int64_t q = 0; q < B; ++q) {
            CMatMap G(nd.grad.ptr() + q * m * n, m, n);
            if (pa->requires_grad) {
                pa->ensure_grad();
                CMatMap Bm(pb->val.ptr() + q * k * n, k, n);
                MatMap DA(pa->grad.ptr() + q * m * k, m, k);
                DA.noalias() += G * Bm.transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                CMatMap A(pa->val.ptr() + q * m * k, m, k);
                MatMap DB(pb->grad.ptr() + q * k * n, k, n);
                DB.noalias() += A.transpose() * G;
            }
        }
    });
}

Var bmm_nt(const Var& a, const Var& b) {
    check(a->val.rank() == 3 && b->val.rank() == 3 && a->val.dim(0) == b->val.dim(0) &&
              a->val.dim(2) == b->val.dim(2),
          "bmm_nt shapes");
    const std::int64_t B = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2), n = b->val.dim(1);
    Tensor y({B, m, n});
    for (std::int64_t q = 0; q < B; ++q) {
        CMatMap A(a->val.ptr() + q * m * k, m, k), Bm(b->val.ptr() + q * n * k, n, k);
        MatMap Y(y.ptr() + q * m * n, m, n);
        Y.noalias() = A * Bm.transpose();
    }
    return make(std::move(y), {a, b}, [pa = a.get(), pb = b.get(), B, m, k, n](Node& nd) {
        for (std::int64_t q = 0; q < B; ++q) {
            CMatMap G(nd.grad.ptr() + q * m * n, m, n);
            if (pa->requires_grad) {
                pa->ensure_grad();
                CMatMap Bm(pb->val.ptr() + q * n * k, n, k);
                MatMap DA(pa->grad.ptr() + q * m * k, m, k);
                DA.noalias() += G * Bm;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                CMatMap A(pa->val.ptr() + q * m * k, m, k);
                MatMap DB(pb->grad.ptr() + q * n * k, n, k);
                DB.noalias() += G.transpose() * A;
            }
        }
    });
}

// ---------------- reductions & norms ----------------

Var softmax_lastdim(const Var& a) {
    const std::int64_t d = a->val.shape.back();
    const std::int64_t rows = a->val.numel() / d;
    Tensor y = a->val;
    for (std::int64_t i = 0; i < rows; ++i) {
        double* p = y.ptr() + i * d;
        double mx = p[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, p[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (std::int64_t j = 0; j < d; ++j) p[j] /= sum;
    }
    return make(std::move(y), {a}, [pa = a.get(), rows, d](Node& nd) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
            const double* yv = nd.val.ptr() + i * d;
            const double* g = nd.grad.ptr() + i * d;
            double dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += g[j] * yv[j];
            double* dx = pa->grad.ptr() + i * d;
            for (std::int64_t j = 0; j < d; ++j) dx[j] += yv[j] * (g[j] - dot);
        }
    });
}

Var mean_all(const Var& a) {
    const std::int64_t n = a->val.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a->val[i];
    Tensor y = Tensor::scalar(s / static_cast<double>(n));
    return make(std::move(y), {a}, [pa = a.get(), n](Node& nd) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const double g = nd.grad[0] / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += g;
    });
}

Var layer_norm_rows(const Var& x, double eps) {
    check(x->val.rank() == 2, "layer_norm_rows wants [n,d]");
    const std::int64_t n = x->val.dim(0), d = x->val.dim(1);
    Tensor y(x->val.shape);
    auto stats = std::make_shared<std::vector<double>>(2 * n);  // mu, inv_std per row
    for (std::int64_t i = 0; i < n; ++i) {
        const double* p = x->val.ptr() + i * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += p[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) var += (p[j] - mu) * (p[j] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * i] = mu;
        (*stats)[2 * i + 1] = inv;
        double* q = y.ptr() + i * d;
        for (std::int64_t j = 0; j < d; ++j) q[j] = (p[j] - mu) * inv;
    }
    return make(std::move(y), {x}, [px = x.get(), stats, n, d](Node& nd) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double mu = (*stats)[2 * i], inv = (*stats)[2 * i + 1];
            const double* xp = px->val.ptr() + i * d;
            const double* g = nd.grad.ptr() + i * d;
            double gsum = 0.0, gxsum = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                double xh = (xp[j] - mu) * inv;
                gsum += g[j];
                gxsum += g[j] * xh;
            }
            gsum /= static_cast<double>(d);
            gxsum /= static_cast<double>(d);
            double* dx = px->grad.ptr() + i * d;
            for (std::int64_t j = 0; j < d; ++j) {
                double xh = (xp[j] - mu) * inv;
                dx[j] += inv * (g[j] - gsum - xh * gxsum);
            }
        }
    });
}

Var group_norm_frames(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
    check(x->val.rank() == 4, "group_norm_frames wants [t,c,h,w]");
    const std::int64_t T = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    check(C % groups == 0, "group count must divide channels");
    check(gamma->val.numel() == C && beta->val.numel() == C, "group_norm affine shape");
    const std::int64_t cg = C / groups, hw = H * W, m = cg * hw;
    Tensor y(x->val.shape);
    auto stats = std::make_shared<std::vector<double>>(2 * T * groups);
    for (std::int64_t t = 0; t < T; ++t) {
        for (int g = 0; g < groups; ++g) {
            const double* base = x->val.ptr() + (t * C + g * cg) * hw;
            double mu = 0.0;
            for (std::int64_t i = 0; i < m; ++i) mu += base[i];
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t i = 0; i < m; ++i) var += (base[i] - mu) * (base[i] - mu);
            var /= static_cast<double>(m);
            double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[2 * (t * groups + g)] = mu;
            (*stats)[2 * (t * groups + g) + 1] = inv;
            double* out = y.ptr() + (t * C + g * cg) * hw;
            for (std::int64_t c = 0; c < cg; ++c) {
                const double ga = gamma->val[g * cg + c], be = beta->val[g * cg + c];
                for (std::int64_t i = 0; i < hw; ++i)
                    out[c * hw + i] = (base[c * hw + i] - mu) * inv * ga + be;
            }
        }
    }
    return make(std::move(y), {x, gamma, beta},
                [px = x.get(), pg = gamma.get(), pb = beta.get(), stats, T, C, groups, cg, hw,
                 m](Node& nd) {
                    for (std::int64_t t = 0; t < T; ++t) {
                        for (int g = 0; g < groups; ++g) {
                            const double mu = (*stats)[2 * (t * groups + g)];
                            const double inv = (*stats)[2 * (t * groups + g) + 1];
                            const double* xb = px->val.ptr() + (t * C + g * cg) * hw;
                            const double* gb = nd.grad.ptr() + (t * C + g * cg) * hw;
                            // grads wrt gamma/beta
                            if (pg->requires_grad) {
                                pg->ensure_grad();
                                pb->ensure_grad();
                                for (std::int64_t c = 0; c < cg; ++c) {
                                    double dga = 0.0, dbe = 0.0;
                                    for (std::int64_t i = 0; i < hw; ++i) {
                                        double xh = (xb[c * hw + i] - mu) * inv;
                                        dga += gb[c * hw + i] * xh;
                                        dbe += gb[c * hw + i];
                                    }
                                    pg->grad[g * cg + c] += dga;
                                    pb->grad[g * cg + c] += dbe;
                                }
                            }
                            if (!px->requires_grad) continue;
                            px->ensure_grad();
                            // ghat = g * gamma; dx = inv*(ghat - mean(ghat) - xhat*mean(ghat*xhat))
                            double gsum = 0.0, gxsum = 0.0;
                            for (std::int64_t c = 0; c < cg; ++c) {
                                const double ga = pg->val[g * cg + c];
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    double gh = gb[c * hw + i] * ga;
                                    double xh = (xb[c * hw + i] - mu) * inv;
                                    gsum += gh;
                                    gxsum += gh * xh;
                                }
                            }
                            gsum /= static_cast<double>(m);
                            gxsum /= static_cast<double>(m);
                            double* dx = px->grad.ptr() + (t * C + g * cg) * hw;
                            for (std::int64_t c = 0; c < cg; ++c) {
                                const double ga = pg->val[g * cg + c];
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    double gh = gb[c * hw + i] * ga;
                                    double xh = (xb[c * hw + i] - mu) * inv;
                                    dx[c * hw + i] += inv * (gh - gsum - xh * gxsum);
                                }
                            }
                        }
                    }
                });
}

// ---------------- convolutions ----------------

// gather x[n] into [c*kh*kw, oh*ow]
static void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw,
                   int stride, int pad, std::int64_t oh, std::int64_t ow, double* cols) {
    for (std::int64_t c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = cols + ((c * kh + ky) * kw + kx) * oh * ow;
                for (std::int64_t y = 0; y < oh; ++y) {
                    std::int64_t iy = y * stride + ky - pad;
                    for (std::int64_t xo = 0; xo < ow; ++xo) {
                        std::int64_t ix = xo * stride + kx - pad;
                        dst[y * ow + xo] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                               ? x[(c * H + iy) * W + ix]
                                               : 0.0;
                    }
                }
            }
        }
    }
}

static void col2im_acc(const double* cols, std::int64_t C, std::int64_t H, std::int64_t W, int kh,
                       int kw, int stride, int pad, std::int64_t oh, std::int64_t ow, double* dx) {
    for (std::int64_t c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = cols + ((c * kh + ky) * kw + kx) * oh * ow;
                for (std::int64_t y = 0; y < oh; ++y) {
                    std::int64_t iy = y * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (std::int64_t xo = 0; xo < ow; ++xo) {
                        std::int64_t ix = xo * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        dx[(c * H + iy) * W + ix] += src[y * ow + xo];
                    }
                }
            }
        }
    }
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check(x->val.rank() == 4 && w->val.rank() == 4 && x->val.dim(1) == w->val.dim(1),
          "conv2d shapes");
    const std::int64_t N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    const std::int64_t F = w->val.dim(0);
    const int kh = static_cast<int>(w->val.dim(2)), kw = static_cast<int>(w->val.dim(3));
    const std::int64_t oh = (H + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (W + 2 * pad - kw) / stride + 1;
    const std::int64_t K = C * kh * kw, M = oh * ow;
    Tensor y({N, F, oh, ow});
    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N * K * M));
    for (std::int64_t nIdx = 0; nIdx < N; ++nIdx) {
        double* cn = cols->data() + nIdx * K * M;
        im2col(x->val.ptr() + nIdx * C * H * W, C, H, W, kh, kw, stride, pad, oh, ow, cn);
        CMatMap Wm(w->val.ptr(), F, K), Cm(cn, K, M);
        MatMap Ym(y.ptr() + nIdx * F * M, F, M);
        Ym.noalias() = Wm * Cm;
    }
    if (b) {
        check(b->val.numel() == F, "conv2d bias shape");
        for (std::int64_t nIdx = 0; nIdx < N; ++nIdx)
            for (std::int64_t f = 0; f < F; ++f) {
                double* p = y.ptr() + (nIdx * F + f) * M;
                for (std::int64_t i = 0; i < M; ++i) p[i] += b->val[f];
            }
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make(std::move(y), std::move(parents),
                [px = x.get(), pw = w.get(), pb = b ? b.get() : nullptr, cols, N, C, H, W, F, kh,
                 kw, stride, pad, oh, ow, K, M](Node& nd) {
                    std::vector<double> dcols(static_cast<std::size_t>(K * M));
                    for (std::int64_t nIdx = 0; nIdx < N; ++nIdx) {
                        CMatMap G(nd.grad.ptr() + nIdx * F * M, F, M);
                        if (pw->requires_grad) {
                            pw->ensure_grad();
                            CMatMap Cm(cols->data() + nIdx * K * M, K, M);
                            MatMap DW(pw->grad.ptr(), F, K);
                            DW.noalias() += G * Cm.transpose();
                        }
                        if (px->requires_grad) {
                            px->ensure_grad();
                            CMatMap Wm(pw->val.ptr(), F, K);
                            MatMap DC(dcols.data(), K, M);
                            DC.noalias() = Wm.transpose() * G;
                            col2im_acc(dcols.data(), C, H, W, kh, kw, stride, pad, oh, ow,
                                       px->grad.ptr() + nIdx * C * H * W);
                        }
                        if (pb && pb->requires_grad) {
                            pb->ensure_grad();
                            for (std::int64_t f = 0; f < F; ++f) {
                                const double* g = nd.grad.ptr() + (nIdx * F + f) * M;
                                double acc = 0.0;
                                for (std::int64_t i = 0; i < M; ++i) acc += g[i];
                                pb->grad[f] += acc;
                            }
                        }
                    }
                });
}

Var conv_temporal(const Var& x, const Var& w, const Var& b, int stride) {
    check(x->val.rank() == 4 && w->val.rank() == 3 && x->val.dim(1) == w->val.dim(1),
          "conv_temporal shapes");
    const std::int64_t T = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    const std::int64_t F = w->val.dim(0);
    const int k = static_cast<int>(w->val.dim(2));
    // causal: left zero pad of k-1 frames, output frame t' reads inputs
    // [t'*stride - (k-1), t'*stride]
    const std::int64_t To = (T - 1) / stride + 1;
    const std::int64_t hw = H * W;
    Tensor y({To, F, H, W});
    for (std::int64_t to = 0; to < To; ++to) {
        for (std::int64_t f = 0; f < F; ++f) {
            double* out = y.ptr() + (to * F + f) * hw;
            if (b) {
                for (std::int64_t i = 0; i < hw; ++i) out[i] = b->val[f];
            }
            for (int j = 0; j < k; ++j) {
                std::int64_t ti = to * stride + j - (k - 1);
                if (ti < 0) continue;  // zero pad
                for (std::int64_t c = 0; c < C; ++c) {
                    const double wv = w->val[(f * C + c) * k + j];
                    if (wv == 0.0) continue;
                    const double* in = x->val.ptr() + (ti * C + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) out[i] += wv * in[i];
                }
            }
        }
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make(std::move(y), std::move(parents),
                [px = x.get(), pw = w.get(), pb = b ? b.get() : nullptr, T, C, F, k, stride, To,
                 hw](Node& nd) {
                    for (std::int64_t to = 0; to < To; ++to) {
                        for (std::int64_t f = 0; f < F; ++f) {
                            const double* g = nd.grad.ptr() + (to * F + f) * hw;
                            if (pb && pb->requires_grad) {
                                pb->ensure_grad();
                                double acc = 0.0;
                                for (std::int64_t i = 0; i < hw; ++i) acc += g[i];
                                pb->grad[f] += acc;
                            }
                            for (int j = 0; j < k; ++j) {
                                std::int64_t ti = to * stride + j - (k - 1);
                                if (ti < 0) continue;
                                for (std::int64_t c = 0; c < C; ++c) {
                                    const double* in = px->val.ptr() + (ti * C + c) * hw;
                                    if (pw->requires_grad) {
                                        pw->ensure_grad();
                                        double acc = 0.0;
                                        for (std::int64_t i = 0; i < hw; ++i) acc += g[i] * in[i];
                                        pw->grad[(f * C + c) * k + j] += acc;
                                    }
                                    if (px->requires_grad) {
                                        px->ensure_grad();
                                        const double wv = pw->val[(f * C + c) * k + j];
                                        double* dx = px->grad.ptr() + (ti * C + c) * hw;
                                        for (std::int64_t i = 0; i < hw; ++i) dx[i] += wv * g[i];
                                    }
                                }
                            }
                        }
                    }
                });
}

}  // namespace s2r::ad
