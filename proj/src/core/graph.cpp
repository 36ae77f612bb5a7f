#include "storm/core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "storm/simd/kernels.hpp"

namespace storm::core {

namespace {

thread_local int g_no_grad_depth = 0;
int g_epoch = 0;

using BackFn = std::function<void(Node&)>;

Var make_op(Mat val, std::initializer_list<Var> parents, BackFn fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    if (g_no_grad_depth == 0) {
        bool rg = false;
        for (const Var& p : parents) rg = rg || p.requires_grad();
        if (rg) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (const Var& p : parents) n->parents.push_back(p.node());
            n->backprop = std::move(fn);
        }
    }
    return Var(n);
}

Var make_op(Mat val, const std::vector<Var>& parents, BackFn fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    if (g_no_grad_depth == 0) {
        bool rg = false;
        for (const Var& p : parents) rg = rg || p.requires_grad();
        if (rg) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (const Var& p : parents) n->parents.push_back(p.node());
            n->backprop = std::move(fn);
        }
    }
    return Var(n);
}

const simd::Kernels& K() { return simd::active(); }

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var Var::constant(Mat m) {
    auto n = std::make_shared<Node>();
    n->val = std::move(m);
    return Var(n);
}

Var Var::param(Mat m) {
    auto n = std::make_shared<Node>();
    n->val = std::move(m);
    n->requires_grad = true;
    return Var(n);
}

double Var::scalar() const {
    if (!n_ || n_->val.size() != 1)
        throw std::logic_error("Var::scalar on non-1x1 value");
    return n_->val.v[0];
}

void backward(const Var& root) {
    if (!root.defined() || root.val().size() != 1)
        throw std::logic_error("backward: root must be a defined 1x1 node");
    if (!root.requires_grad()) return;

    const int epoch = ++g_epoch;
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    root.node()->visit_mark = epoch;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->visit_mark != epoch && p->requires_grad) {
                p->visit_mark = epoch;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad().v[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    check_shape(a.val().same_shape(b.val()), "add: shape mismatch " +
                a.val().shape_str() + " vs " + b.val().shape_str());
    Mat y(a.rows(), a.cols());
    K().add(a.val().data(), b.val().data(), y.data(), y.size());
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    return make_op(std::move(y), {a, b}, [pa, pb](Node& n) {
        if (pa->requires_grad)
            K().add(pa->ensure_grad().data(), n.grad.data(),
                    pa->ensure_grad().data(), n.grad.size());
        if (pb->requires_grad)
            K().add(pb->ensure_grad().data(), n.grad.data(),
                    pb->ensure_grad().data(), n.grad.size());
    });
}

Var sub(const Var& a, const Var& b) {
    check_shape(a.val().same_shape(b.val()), "sub: shape mismatch");
    Mat y(a.rows(), a.cols());
    K().sub(a.val().data(), b.val().data(), y.data(), y.size());
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    return make_op(std::move(y), {a, b}, [pa, pb](Node& n) {
        if (pa->requires_grad)
            K().add(pa->ensure_grad().data(), n.grad.data(),
                    pa->ensure_grad().data(), n.grad.size());
        if (pb->requires_grad)
            K().sub(pb->ensure_grad().data(), n.grad.data(),
                    pb->ensure_grad().data(), n.grad.size());
    });
}

Var mul(const Var& a, const Var& b) {
    check_shape(a.val().same_shape(b.val()), "mul: shape mismatch");
    Mat y(a.rows(), a.cols());
    K().mul(a.val().data(), b.val().data(), y.data(), y.size());
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    return make_op(std::move(y), {a, b}, [pa, pb](Node& n) {
        if (pa->requires_grad)
            K().mul_acc(n.grad.data(), pb->val.data(),
                        pa->ensure_grad().data(), n.grad.size());
        if (pb->requires_grad)
            K().mul_acc(n.grad.data(), pa->val.data(),
                        pb->ensure_grad().data(), n.grad.size());
    });
}

Var div(const Var& a, const Var& b) {
    check_shape(a.val().same_shape(b.val()), "div: shape mismatch");
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.v[i] = a.val().v[i] / b.val().v[i];
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    return make_op(std::move(y), {a, b}, [pa, pb](Node& n) {
        const std::size_t sz = n.grad.size();
        if (pa->requires_grad) {
            Mat& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < sz; ++i)
                ga.v[i] += n.grad.v[i] / pb->val.v[i];
        }
        if (pb->requires_grad) {
            Mat& gb = pb->ensure_grad();
            for (std::size_t i = 0; i < sz; ++i)
                gb.v[i] -= n.grad.v[i] * n.val.v[i] / pb->val.v[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    Mat y = a.val();
    for (double& x : y.v) x += s;
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        K().add(pa->ensure_grad().data(), n.grad.data(),
                pa->ensure_grad().data(), n.grad.size());
    });
}

Var mul_scalar(const Var& a, double s) {
    Mat y(a.rows(), a.cols());
    K().scale(a.val().data(), s, y.data(), y.size());
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, s](Node& n) {
        K().axpy(s, n.grad.data(), pa->ensure_grad().data(), n.grad.size());
    });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var exp_(const Var& a) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] = std::exp(a.val().v[i]);
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        K().mul_acc(n.grad.data(), n.val.data(), pa->ensure_grad().data(),
                    n.grad.size());
    });
}

Var log_(const Var& a) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] = std::log(a.val().v[i]);
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            ga.v[i] += n.grad.v[i] / pa->val.v[i];
    });
}

Var tanh_(const Var& a) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] = std::tanh(a.val().v[i]);
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            ga.v[i] += n.grad.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
    });
}

Var sigmoid_(const Var& a) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.v[i] = 1.0 / (1.0 + std::exp(-a.val().v[i]));
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            ga.v[i] += n.grad.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
    });
}

Var relu(const Var& a) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.v[i] = a.val().v[i] > 0.0 ? a.val().v[i] : 0.0;
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (pa->val.v[i] > 0.0) ga.v[i] += n.grad.v[i];
    });
}

Var gelu(const Var& a) {
    static const double inv_sqrt2 = 0.7071067811865475244;
    static const double inv_sqrt2pi = 0.3989422804014326779;
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double x = a.val().v[i];
        y.v[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = pa->val.v[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            ga.v[i] += n.grad.v[i] * (cdf + x * pdf);
        }
    });
}

Var pow_scalar(const Var& a, double p) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.v[i] = std::pow(a.val().v[i], p);
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, p](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            ga.v[i] += n.grad.v[i] * p * std::pow(pa->val.v[i], p - 1.0);
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.v[i] = std::min(hi, std::max(lo, a.val().v[i]));
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, lo, hi](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = pa->val.v[i];
            if (x >= lo && x <= hi) ga.v[i] += n.grad.v[i];
        }
    });
}

// ---------------------------------------------------------------------------
// broadcasting

Var add_rowvec(const Var& a, const Var& v) {
    check_shape(v.rows() == 1 && v.cols() == a.cols(),
                "add_rowvec: expected 1x" + std::to_string(a.cols()));
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        K().add(a.val().row(i), v.val().data(), y.row(i), a.cols());
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    return make_op(std::move(y), {a, v}, [pa, pv](Node& n) {
        if (pa->requires_grad)
            K().add(pa->ensure_grad().data(), n.grad.data(),
                    pa->ensure_grad().data(), n.grad.size());
        if (pv->requires_grad) {
            Mat& gv = pv->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                K().add(gv.data(), n.grad.row(i), gv.data(), n.grad.cols);
        }
    });
}

Var sub_rowvec(const Var& a, const Var& v) {
    check_shape(v.rows() == 1 && v.cols() == a.cols(), "sub_rowvec: bad shape");
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        K().sub(a.val().row(i), v.val().data(), y.row(i), a.cols());
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    return make_op(std::move(y), {a, v}, [pa, pv](Node& n) {
        if (pa->requires_grad)
            K().add(pa->ensure_grad().data(), n.grad.data(),
                    pa->ensure_grad().data(), n.grad.size());
        if (pv->requires_grad) {
            Mat& gv = pv->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                K().sub(gv.data(), n.grad.row(i), gv.data(), n.grad.cols);
        }
    });
}

Var add_colvec(const Var& a, const Var& u) {
    check_shape(u.cols() == 1 && u.rows() == a.rows(), "add_colvec: bad shape");
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double s = u.val().v[i];
        for (std::size_t j = 0; j < a.cols(); ++j)
            y.at(i, j) = a.val().at(i, j) + s;
    }
    Node* pa = a.node().get();
    Node* pu = u.node().get();
    return make_op(std::move(y), {a, u}, [pa, pu](Node& n) {
        if (pa->requires_grad)
            K().add(pa->ensure_grad().data(), n.grad.data(),
                    pa->ensure_grad().data(), n.grad.size());
        if (pu->requires_grad) {
            Mat& gu = pu->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                gu.v[i] += K().sum(n.grad.row(i), n.grad.cols);
        }
    });
}

Var mul_colvec(const Var& a, const Var& u) {
    check_shape(u.cols() == 1 && u.rows() == a.rows(), "mul_colvec: bad shape");
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        K().scale(a.val().row(i), u.val().v[i], y.row(i), a.cols());
    Node* pa = a.node().get();
    Node* pu = u.node().get();
    return make_op(std::move(y), {a, u}, [pa, pu](Node& n) {
        if (pa->requires_grad) {
            Mat& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                K().axpy(pu->val.v[i], n.grad.row(i), ga.row(i), n.grad.cols);
        }
        if (pu->requires_grad) {
            Mat& gu = pu->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                gu.v[i] += K().dot(n.grad.row(i), pa->val.row(i), n.grad.cols);
        }
    });
}

Var div_colvec(const Var& a, const Var& u) {
    check_shape(u.cols() == 1 && u.rows() == a.rows(), "div_colvec: bad shape");
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        K().scale(a.val().row(i), 1.0 / u.val().v[i], y.row(i), a.cols());
    Node* pa = a.node().get();
    Node* pu = u.node().get();
    return make_op(std::move(y), {a, u}, [pa, pu](Node& n) {
        if (pa->requires_grad) {
            Mat& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                K().axpy(1.0 / pu->val.v[i], n.grad.row(i), ga.row(i),
                         n.grad.cols);
        }
        if (pu->requires_grad) {
            Mat& gu = pu->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                gu.v[i] -= K().dot(n.grad.row(i), n.val.row(i), n.grad.cols) /
                           pu->val.v[i];
        }
    });
}

Var mul_rowvec(const Var& a, const Var& v) {
    check_shape(v.rows() == 1 && v.cols() == a.cols(), "mul_rowvec: bad shape");
    Mat y(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        K().mul(a.val().row(i), v.val().data(), y.row(i), a.cols());
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    return make_op(std::move(y), {a, v}, [pa, pv](Node& n) {
        if (pa->requires_grad) {
            Mat& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                K().mul_acc(n.grad.row(i), pv->val.data(), ga.row(i),
                            n.grad.cols);
        }
        if (pv->requires_grad) {
            Mat& gv = pv->ensure_grad();
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                K().mul_acc(n.grad.row(i), pa->val.row(i), gv.data(),
                            n.grad.cols);
        }
    });
}

Var scale_by_scalar(const Var& a, const Var& s) {
    check_shape(s.val().size() == 1, "scale_by_scalar: scale must be 1x1");
    Mat y(a.rows(), a.cols());
    K().scale(a.val().data(), s.val().v[0], y.data(), y.size());
    Node* pa = a.node().get();
    Node* ps = s.node().get();
    return make_op(std::move(y), {a, s}, [pa, ps](Node& n) {
        if (pa->requires_grad)
            K().axpy(ps->val.v[0], n.grad.data(), pa->ensure_grad().data(),
                     n.grad.size());
        if (ps->requires_grad)
            ps->ensure_grad().v[0] +=
                K().dot(n.grad.data(), pa->val.data(), n.grad.size());
    });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const std::size_t m = trans_a ? a.cols() : a.rows();
    const std::size_t ka = trans_a ? a.rows() : a.cols();
    const std::size_t kb = trans_b ? b.cols() : b.rows();
    const std::size_t n = trans_b ? b.rows() : b.cols();
    check_shape(ka == kb, "matmul: inner dims " + std::to_string(ka) + " vs " +
                              std::to_string(kb));
    Mat y(m, n);
    K().gemm(a.val().data(), b.val().data(), y.data(), m, ka, n, trans_a,
             trans_b, false);
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    const std::size_t k = ka;
    return make_op(std::move(y), {a, b},
                   [pa, pb, m, k, n, trans_a, trans_b](Node& nd) {
        const Mat& g = nd.grad;
        if (pa->requires_grad) {
            Mat& ga = pa->ensure_grad();
            if (!trans_a) {
                // dA = g . B'^T
                K().gemm(g.data(), pb->val.data(), ga.data(), m, n, k, false,
                         !trans_b, true);
            } else {
                // dA(stored k x m) = B' . g^T
                if (!trans_b)
                    K().gemm(pb->val.data(), g.data(), ga.data(), k, n, m,
                             false, true, true);
                else
                    K().gemm(pb->val.data(), g.data(), ga.data(), k, n, m,
                             true, true, true);
            }
        }
        if (pb->requires_grad) {
            Mat& gb = pb->ensure_grad();
            if (!trans_b) {
                // dB = A'^T . g
                K().gemm(pa->val.data(), g.data(), gb.data(), k, m, n,
                         !trans_a, false, true);
            } else {
                // dB(stored n x k) = g^T . A'
                if (!trans_a)
                    K().gemm(g.data(), pa->val.data(), gb.data(), n, m, k,
                             true, false, true);
                else
                    K().gemm(g.data(), pa->val.data(), gb.data(), n, m, k,
                             true, true, true);
            }
        }
    });
}

Var transpose(const Var& a) {
    Mat y(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            y.at(j, i) = a.val().at(i, j);
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.rows; ++i)
            for (std::size_t j = 0; j < n.grad.cols; ++j)
                ga.at(j, i) += n.grad.at(i, j);
    });
}

// ---------------------------------------------------------------------------
// reductions

Var sum_all(const Var& a) {
    Mat y(1, 1);
    y.v[0] = K().sum(a.val().data(), a.val().size());
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        const double g = n.grad.v[0];
        for (double& x : ga.v) x += g;
    });
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / double(a.val().size());
    Mat y(1, 1);
    y.v[0] = K().sum(a.val().data(), a.val().size()) * inv;
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, inv](Node& n) {
        Mat& ga = pa->ensure_grad();
        const double g = n.grad.v[0] * inv;
        for (double& x : ga.v) x += g;
    });
}

Var row_sums(const Var& a) {
    Mat y(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i)
        y.v[i] = K().sum(a.val().row(i), a.cols());
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < ga.rows; ++i) {
            const double g = n.grad.v[i];
            for (std::size_t j = 0; j < ga.cols; ++j) ga.at(i, j) += g;
        }
    });
}

Var col_sums(const Var& a) {
    Mat y(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        K().add(y.data(), a.val().row(i), y.data(), a.cols());
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < ga.rows; ++i)
            K().add(ga.row(i), n.grad.data(), ga.row(i), ga.cols);
    });
}

Var logsumexp_rows(const Var& a) {
    Mat soft(a.rows(), a.cols());
    K().softmax_rows(a.val().data(), soft.data(), a.rows(), a.cols());
    Mat y(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* xr = a.val().row(i);
        double mx = xr[0];
        for (std::size_t j = 1; j < a.cols(); ++j)
            mx = xr[j] > mx ? xr[j] : mx;
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += std::exp(xr[j] - mx);
        y.v[i] = mx + std::log(acc);
    }
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, soft = std::move(soft)](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < ga.rows; ++i)
            K().axpy(n.grad.v[i], soft.row(i), ga.row(i), ga.cols);
    });
}

// ---------------------------------------------------------------------------
// shape

Var reshape(const Var& a, std::size_t r, std::size_t c) {
    check_shape(r * c == a.val().size(), "reshape: element count mismatch");
    Mat y(r, c, a.val().v);
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        K().add(pa->ensure_grad().data(), n.grad.data(),
                pa->ensure_grad().data(), n.grad.size());
    });
}

Var slice_rows(const Var& a, std::size_t r0, std::size_t r1) {
    check_shape(r0 <= r1 && r1 <= a.rows(), "slice_rows: range out of bounds");
    Mat y(r1 - r0, a.cols());
    std::copy(a.val().row(r0), a.val().row(r0) + y.size(), y.data());
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, r0](Node& n) {
        Mat& ga = pa->ensure_grad();
        K().add(ga.row(r0), n.grad.data(), ga.row(r0), n.grad.size());
    });
}

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
    check_shape(c0 <= c1 && c1 <= a.cols(), "slice_cols: range out of bounds");
    Mat y(a.rows(), c1 - c0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        std::copy(a.val().row(i) + c0, a.val().row(i) + c1, y.row(i));
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa, c0](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.rows; ++i)
            K().add(ga.row(i) + c0, n.grad.row(i), ga.row(i) + c0, n.grad.cols);
    });
}

Var concat_rows(const std::vector<Var>& xs) {
    check_shape(!xs.empty(), "concat_rows: empty input");
    const std::size_t c = xs[0].cols();
    std::size_t r = 0;
    for (const Var& x : xs) {
        check_shape(x.cols() == c, "concat_rows: column mismatch");
        r += x.rows();
    }
    Mat y(r, c);
    std::size_t off = 0;
    for (const Var& x : xs) {
        std::copy(x.val().data(), x.val().data() + x.val().size(), y.row(off));
        off += x.rows();
    }
    std::vector<Node*> ps;
    for (const Var& x : xs) ps.push_back(x.node().get());
    return make_op(std::move(y), xs, [ps](Node& n) {
        std::size_t off = 0;
        for (Node* p : ps) {
            if (p->requires_grad) {
                Mat& g = p->ensure_grad();
                K().add(g.data(), n.grad.row(off), g.data(), g.size());
            }
            off += p->val.rows;
        }
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    check_shape(!xs.empty(), "concat_cols: empty input");
    const std::size_t r = xs[0].rows();
    std::size_t c = 0;
    for (const Var& x : xs) {
        check_shape(x.rows() == r, "concat_cols: row mismatch");
        c += x.cols();
    }
    Mat y(r, c);
    std::size_t off = 0;
    for (const Var& x : xs) {
        for (std::size_t i = 0; i < r; ++i)
            std::copy(x.val().row(i), x.val().row(i) + x.cols(),
                      y.row(i) + off);
        off += x.cols();
    }
    std::vector<Node*> ps;
    for (const Var& x : xs) ps.push_back(x.node().get());
    return make_op(std::move(y), xs, [ps](Node& n) {
        std::size_t off = 0;
        for (Node* p : ps) {
            if (p->requires_grad) {
                Mat& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.rows; ++i)
                    K().add(g.row(i), n.grad.row(i) + off, g.row(i), g.cols);
            }
            off += p->val.cols;
        }
    });
}

Var stopgrad(const Var& a) { return Var::constant(a.val()); }

// ---------------------------------------------------------------------------
// fused / structured

Var softmax_rows(const Var& a) {
    Mat y(a.rows(), a.cols());
    K().softmax_rows(a.val().data(), y.data(), a.rows(), a.cols());
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n.val.rows; ++i) {
            const double* yr = n.val.row(i);
            const double* gr = n.grad.row(i);
            const double inner = K().dot(yr, gr, n.val.cols);
            for (std::size_t j = 0; j < n.val.cols; ++j)
                ga.at(i, j) += yr[j] * (gr[j] - inner);
        }
    });
}

Var softmax_cols(const Var& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Mat y(r, c);
    for (std::size_t j = 0; j < c; ++j) {
        double mx = a.val().at(0, j);
        for (std::size_t i = 1; i < r; ++i)
            mx = std::max(mx, a.val().at(i, j));
        double denom = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            y.at(i, j) = std::exp(a.val().at(i, j) - mx);
            denom += y.at(i, j);
        }
        const double inv = 1.0 / denom;
        for (std::size_t i = 0; i < r; ++i) y.at(i, j) *= inv;
    }
    Node* pa = a.node().get();
    return make_op(std::move(y), {a}, [pa](Node& n) {
        Mat& ga = pa->ensure_grad();
        for (std::size_t j = 0; j < n.val.cols; ++j) {
            double inner = 0.0;
            for (std::size_t i = 0; i < n.val.rows; ++i)
                inner += n.val.at(i, j) * n.grad.at(i, j);
            for (std::size_t i = 0; i < n.val.rows; ++i)
                ga.at(i, j) += n.val.at(i, j) * (n.grad.at(i, j) - inner);
        }
    });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias,
                    double eps) {
    const std::size_t r = x.rows(), c = x.cols();
    check_shape(gain.rows() == 1 && gain.cols() == c, "layer_norm: gain shape");
    check_shape(bias.rows() == 1 && bias.cols() == c, "layer_norm: bias shape");
    Mat y(r, c);
    Mat xhat(r, c);
    Mat inv_sigma(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xr = x.val().row(i);
        const double mu = K().sum(xr, c) / double(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= double(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma.v[i] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            xhat.at(i, j) = (xr[j] - mu) * inv;
            y.at(i, j) = xhat.at(i, j) * gain.val().v[j] + bias.val().v[j];
        }
    }
    Node* px = x.node().get();
    Node* pg = gain.node().get();
    Node* pb = bias.node().get();
    return make_op(std::move(y), {x, gain, bias},
                   [px, pg, pb, xhat = std::move(xhat),
                    inv_sigma = std::move(inv_sigma)](Node& n) {
        const std::size_t r = n.val.rows, c = n.val.cols;
        if (pg->requires_grad) {
            Mat& gg = pg->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                K().mul_acc(n.grad.row(i), xhat.row(i), gg.data(), c);
        }
        if (pb->requires_grad) {
            Mat& gb = pb->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                K().add(gb.data(), n.grad.row(i), gb.data(), c);
        }
        if (px->requires_grad) {
            Mat& gx = px->ensure_grad();
            std::vector<double> dxhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                K().mul(n.grad.row(i), pg->val.data(), dxhat.data(), c);
                const double mean_d = K().sum(dxhat.data(), c) / double(c);
                const double mean_dx =
                    K().dot(dxhat.data(), xhat.row(i), c) / double(c);
                const double inv = inv_sigma.v[i];
                for (std::size_t j = 0; j < c; ++j)
                    gx.at(i, j) +=
                        inv * (dxhat[j] - mean_d - xhat.at(i, j) * mean_dx);
            }
        }
    });
}

Var mixture_blend(const Var& alpha, const Var& feats) {
    const std::size_t kk = alpha.rows();
    const std::size_t nn = alpha.cols();
    const std::size_t d = feats.cols();
    check_shape(feats.rows() == kk * nn,
                "mixture_blend: feats rows must be K*N");
    Mat y(nn, d);
    for (std::size_t k = 0; k < kk; ++k)
        for (std::size_t n = 0; n < nn; ++n)
            K().axpy(alpha.val().at(k, n), feats.val().row(k * nn + n),
                     y.row(n), d);
    Node* pa = alpha.node().get();
    Node* pf = feats.node().get();
    return make_op(std::move(y), {alpha, feats}, [pa, pf, kk, nn, d](Node& nd) {
        if (pa->requires_grad) {
            Mat& ga = pa->ensure_grad();
            for (std::size_t k = 0; k < kk; ++k)
                for (std::size_t n = 0; n < nn; ++n)
                    ga.at(k, n) += K().dot(nd.grad.row(n),
                                           pf->val.row(k * nn + n), d);
        }
        if (pf->requires_grad) {
            Mat& gf = pf->ensure_grad();
            for (std::size_t k = 0; k < kk; ++k)
                for (std::size_t n = 0; n < nn; ++n)
                    K().axpy(pa->val.at(k, n), nd.grad.row(n),
                             gf.row(k * nn + n), d);
        }
    });
}

Var im2col(const Var& input, std::size_t h, std::size_t w, std::size_t kh,
           std::size_t kw, std::size_t stride, std::size_t pad) {
    const std::size_t ch = input.rows();
    check_shape(input.cols() == h * w, "im2col: input cols must be H*W");
    check_shape(h + 2 * pad >= kh && w + 2 * pad >= kw, "im2col: kernel too big");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    Mat y(ch * kh * kw, oh * ow);
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
                double* out = y.row((c * kh + ki) * kw + kj);
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t ii =
                        std::ptrdiff_t(oi * stride + ki) - std::ptrdiff_t(pad);
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t jj =
                            std::ptrdiff_t(oj * stride + kj) -
                            std::ptrdiff_t(pad);
                        double vv = 0.0;
                        if (ii >= 0 && ii < std::ptrdiff_t(h) && jj >= 0 &&
                            jj < std::ptrdiff_t(w))
                            vv = input.val().at(c, std::size_t(ii) * w +
                                                       std::size_t(jj));
                        out[oi * ow + oj] = vv;
                    }
                }
            }
    Node* pi = input.node().get();
    return make_op(std::move(y), {input},
                   [pi, h, w, kh, kw, stride, pad](Node& n) {
        const std::size_t ch = pi->val.rows;
        const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
        const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
        Mat& g = pi->ensure_grad();
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t ki = 0; ki < kh; ++ki)
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    const double* gr = n.grad.row((c * kh + ki) * kw + kj);
                    for (std::size_t oi = 0; oi < oh; ++oi) {
                        const std::ptrdiff_t ii =
                            std::ptrdiff_t(oi * stride + ki) -
                            std::ptrdiff_t(pad);
                        if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
                        for (std::size_t oj = 0; oj < ow; ++oj) {
                            const std::ptrdiff_t jj =
                                std::ptrdiff_t(oj * stride + kj) -
                                std::ptrdiff_t(pad);
                            if (jj < 0 || jj >= std::ptrdiff_t(w)) continue;
                            g.at(c, std::size_t(ii) * w + std::size_t(jj)) +=
                                gr[oi * ow + oj];
                        }
                    }
                }
    });
}

}  // namespace storm::core
