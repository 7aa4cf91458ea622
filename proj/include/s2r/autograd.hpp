#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "s2r/tensor.hpp"

namespace s2r::ad {

// Reverse-mode autodiff over fp64 tensors.  A Node owns its value, its
// (lazily allocated) gradient, and a closure that scatters the gradient into
// its parents.  Graphs are built per training step and dropped afterwards.
struct Node {
    Tensor val;
    Tensor grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // may be empty (leaves, constants)
    std::string name;                     // set for parameters

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor(val.shape);
    }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor v);
Var leaf(Tensor v, std::string name = "");  // trainable parameter

// Seeds grad(root)=1 (root must be scalar) and runs reverse topological order.
void backward(const Var& root);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var silu(const Var& a);
// y = s * x with a learnable scalar s (shape [1])
Var mul_scalar_param(const Var& x, const Var& s);

// ---- shape ----
Var reshape(const Var& a, std::vector<std::int64_t> shape);
Var permute(const Var& a, const std::vector<int>& perm);
Var slice_cols(const Var& a, std::int64_t off, std::int64_t len);  // a: [n,d]

// ---- broadcast over rows (x: [n,d]) ----
Var add_row(const Var& x, const Var& r);        // r: [1,d]
Var mul_row(const Var& x, const Var& r);        // r: [1,d]
Var add_tile_rows(const Var& x, const Var& p);  // x: [t*m,d], p: [m,d], x[i]+=p[i%m]
Var add_repeat_rows(const Var& x, const Var& p);// x: [t*m,d], p: [t,d], x[i]+=p[i/m]

// ---- linear algebra ----
// x: [n,din], w: [dout,din], b: [dout] or nullptr
Var linear(const Var& x, const Var& w, const Var& b);
Var bmm_nn(const Var& a, const Var& b);  // [B,m,k]x[B,k,n] -> [B,m,n]
Var bmm_nt(const Var& a, const Var& b);  // [B,m,k]x[B,n,k] -> [B,m,n]

// ---- reductions & norms ----
Var softmax_lastdim(const Var& a);
Var mean_all(const Var& a);  // -> [1]
// x: [n,d]; non-affine layer norm per row
Var layer_norm_rows(const Var& x, double eps = 1e-6);
// x: [t,c,h,w]; statistics per frame t and channel group; affine gamma/beta [c]
Var group_norm_frames(const Var& x, int groups, const Var& gamma, const Var& beta,
                      double eps = 1e-6);

// ---- convolutions ----
// x: [n,c,h,w], w: [f,c,kh,kw], b: [f] or nullptr; zero padding `pad` on all sides
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x: [t,c,h,w], w: [f,c,k], b: [f] or nullptr; causal left zero pad of k-1,
// stride along t only.  out length = floor((t-1)/stride)+1
Var conv_temporal(const Var& x, const Var& w, const Var& b, int stride);

}  // namespace s2r::ad
