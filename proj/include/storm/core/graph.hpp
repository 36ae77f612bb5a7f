// Reverse-mode automatic differentiation over 2-D matrices. Forward ops
// build a graph of shared nodes; backward() runs the tape in reverse
// topological order. All arithmetic is double precision and routed through
// the simd kernel layer.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "storm/core/mat.hpp"

namespace storm::core {

struct Node;
using NodeP = std::shared_ptr<Node>;

struct Node {
    Mat val;
    Mat grad;  // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<NodeP> parents;
    std::function<void(Node&)> backprop;  // scatters grad into parents
    int visit_mark = 0;

    Mat& ensure_grad() {
        if (grad.rows != val.rows || grad.cols != val.cols)
            grad = Mat(val.rows, val.cols);
        return grad;
    }
};

// When grads are globally disabled, ops produce detached constant nodes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

class Var {
public:
    Var() = default;
    explicit Var(NodeP n) : n_(std::move(n)) {}

    static Var constant(Mat m);
    static Var param(Mat m);  // leaf with requires_grad

    bool defined() const { return n_ != nullptr; }
    const Mat& val() const { return n_->val; }
    Mat& mutable_val() { return n_->val; }
    const Mat& grad() const { return n_->grad; }
    Mat& ensure_grad() { return n_->ensure_grad(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    std::size_t rows() const { return n_->val.rows; }
    std::size_t cols() const { return n_->val.cols; }
    double scalar() const;  // value of a 1x1 node
    NodeP node() const { return n_; }
    void zero_grad() {
        if (n_) n_->grad = Mat();
    }

private:
    NodeP n_;
};

// Runs reverse-mode accumulation from a 1x1 root.
void backward(const Var& root);

// -- elementwise / scalar ---------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var tanh_(const Var& a);
Var sigmoid_(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var pow_scalar(const Var& a, double p);  // a must be positive where p < 1
Var clamp(const Var& a, double lo, double hi);

// -- broadcasting -----------------------------------------------------------
Var add_rowvec(const Var& a, const Var& v);  // v is 1 x cols
Var add_colvec(const Var& a, const Var& u);  // u is rows x 1
Var mul_colvec(const Var& a, const Var& u);
Var div_colvec(const Var& a, const Var& u);
Var sub_rowvec(const Var& a, const Var& v);
Var mul_rowvec(const Var& a, const Var& v);
// y = a * s with s a 1x1 node (scalar with gradient)
Var scale_by_scalar(const Var& a, const Var& s);

// -- linear algebra ----------------------------------------------------------
Var matmul(const Var& a, const Var& b, bool trans_a = false,
           bool trans_b = false);
Var transpose(const Var& a);

// -- reductions --------------------------------------------------------------
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var row_sums(const Var& a);  // rows x 1
Var col_sums(const Var& a);  // 1 x cols
Var logsumexp_rows(const Var& a);  // rows x 1

// -- shape -------------------------------------------------------------------
Var reshape(const Var& a, std::size_t r, std::size_t c);
Var slice_rows(const Var& a, std::size_t r0, std::size_t r1);
Var slice_cols(const Var& a, std::size_t c0, std::size_t c1);
Var concat_rows(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
Var stopgrad(const Var& a);

// -- fused / structured ------------------------------------------------------
Var softmax_rows(const Var& a);
Var softmax_cols(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias,
                    double eps = 1e-5);
// out[n,:] = sum_k alpha[k,n] * feats[k*N + n, :]
Var mixture_blend(const Var& alpha, const Var& feats);
// Patch extraction for convolutions: input channels x (H*W) ->
// (channels*kh*kw) x (oh*ow). Zero padding.
Var im2col(const Var& input, std::size_t h, std::size_t w, std::size_t kh,
           std::size_t kw, std::size_t stride, std::size_t pad);

}  // namespace storm::core
