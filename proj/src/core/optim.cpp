#include "storm/core/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "storm/simd/kernels.hpp"

namespace storm::core {

Var ParamStore::create(const std::string& name, std::size_t rows,
                       std::size_t cols, Mat init) {
    if (params_.count(name))
        throw std::logic_error("ParamStore: duplicate parameter " + name);
    if (init.rows != rows || init.cols != cols)
        throw std::invalid_argument("ParamStore: init shape mismatch for " +
                                    name);
    Var p = Var::param(std::move(init));
    params_.emplace(name, p);
    return p;
}

Var ParamStore::create_gaussian(const std::string& name, std::size_t rows,
                                std::size_t cols, RngState& rng,
                                double stddev) {
    return create(name, rows, cols, Mat::gaussian(rows, cols, rng, stddev));
}

Var ParamStore::create_zeros(const std::string& name, std::size_t rows,
                             std::size_t cols) {
    return create(name, rows, cols, Mat(rows, cols));
}

Var ParamStore::create_full(const std::string& name, std::size_t rows,
                            std::size_t cols, double fill) {
    return create(name, rows, cols, Mat(rows, cols, fill));
}

bool ParamStore::contains(const std::string& name) const {
    return params_.count(name) != 0;
}

Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
        throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_)
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
}

std::vector<Var> ParamStore::group(const std::string& prefix) const {
    std::vector<Var> out;
    for (const auto& [k, v] : params_)
        if (k.rfind(prefix, 0) == 0) out.push_back(v);
    return out;
}

std::size_t ParamStore::count_values(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_)
        if (k.rfind(prefix, 0) == 0) n += v.val().size();
    return n;
}

std::uint64_t ParamStore::content_hash(const std::string& prefix) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : params_) {
        if (k.rfind(prefix, 0) != 0) continue;
        h = fnv1a(k.data(), k.size(), h);
        h = fnv1a(v.val().data(), v.val().size() * sizeof(double), h);
    }
    return h;
}

void ParamStore::zero_grads(const std::string& prefix) {
    for (auto& [k, v] : params_)
        if (k.rfind(prefix, 0) == 0) const_cast<Var&>(v).zero_grad();
}

AdamW::AdamW(std::vector<std::pair<std::string, Var>> params, Options opt)
    : opt_(opt) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        Slot s;
        s.name = name;
        s.param = p;
        s.m = Mat(p.rows(), p.cols());
        s.v = Mat(p.rows(), p.cols());
        slots_.push_back(std::move(s));
    }
}

double AdamW::grad_global_norm() const {
    double acc = 0.0;
    for (const Slot& s : slots_) {
        const Mat& g = s.param.grad();
        if (g.size() == 0) continue;
        acc += simd::active().dot(g.data(), g.data(), g.size());
    }
    return std::sqrt(acc);
}

void AdamW::step(double lr) {
    ++t_;
    double scale = 1.0;
    if (opt_.clip_norm > 0.0) {
        const double norm = grad_global_norm();
        if (norm > opt_.clip_norm) scale = opt_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    for (Slot& s : slots_) {
        Mat& g = s.param.ensure_grad();
        if (scale != 1.0)
            simd::active().scale(g.data(), scale, g.data(), g.size());
        simd::active().adamw(s.param.mutable_val().data(), g.data(),
                             s.m.data(), s.v.data(), g.size(), lr, opt_.beta1,
                             opt_.beta2, opt_.eps, opt_.weight_decay, bc1, bc2);
        s.param.zero_grad();
    }
}

std::map<std::string, Mat> AdamW::state_tensors() const {
    std::map<std::string, Mat> out;
    for (const Slot& s : slots_) {
        out["adam_m/" + s.name] = s.m;
        out["adam_v/" + s.name] = s.v;
    }
    return out;
}

void AdamW::load_state(const std::map<std::string, Mat>& state,
                       std::uint64_t steps) {
    for (Slot& s : slots_) {
        auto im = state.find("adam_m/" + s.name);
        auto iv = state.find("adam_v/" + s.name);
        if (im == state.end() || iv == state.end())
            throw std::runtime_error("AdamW: missing optimizer state for " +
                                     s.name);
        if (!im->second.same_shape(s.m) || !iv->second.same_shape(s.v))
            throw std::runtime_error("AdamW: state shape mismatch for " +
                                     s.name);
        s.m = im->second;
        s.v = iv->second;
    }
    t_ = steps;
}

std::vector<std::pair<std::string, Var>> named_group(
    const ParamStore& store, const std::string& prefix) {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& [k, v] : store.all())
        if (k.rfind(prefix, 0) == 0) out.emplace_back(k, v);
    return out;
}

}  // namespace storm::core
