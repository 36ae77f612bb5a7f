#include "storm/objectives/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace storm::objectives {

using core::Mat;
using core::Var;

std::string LossReport::to_json() const {
    nlohmann::json j;
    j["recons"] = recons;
    j["sem"] = sem;
    j["pen"] = pen;
    j["temporal"] = temporal;
    j["total"] = total;
    j["weights"] = {{"recons", weights.recons},
                    {"sem", weights.sem},
                    {"pen", weights.pen},
                    {"temporal", weights.temporal}};
    return j.dump();
}

Var recons_loss(const Var& target, const Var& recon, bool frobenius) {
    if (target.rows() != recon.rows() || target.cols() != recon.cols())
        throw std::invalid_argument(
            "recons_loss: shape mismatch " + target.val().shape_str() +
            " vs " + recon.val().shape_str());
    Var diff = core::sub(target, recon);
    Var sq = core::mul(diff, diff);
    if (frobenius) return core::pow_scalar(core::sum_all(sq), 0.5);
    return core::mean_all(sq);
}

namespace {

Var unit_rows(const Var& x, double eps = 1e-12) {
    Var norms = core::pow_scalar(
        core::add_scalar(core::row_sums(core::mul(x, x)), eps), 0.5);
    return core::div_colvec(x, norms);
}

}  // namespace

Var mask_pool(const Var& masks, const Var& dense_feats, double eps,
              std::vector<bool>* zero_rows) {
    if (masks.cols() != dense_feats.rows())
        throw std::invalid_argument("mask_pool: masks N " +
                                    std::to_string(masks.cols()) +
                                    " vs features N " +
                                    std::to_string(dense_feats.rows()));
    for (double v : masks.val().v)
        if (v < 0.0)
            throw std::invalid_argument("mask_pool: negative mask weight");
    if (zero_rows) {
        zero_rows->assign(masks.rows(), false);
        for (std::size_t i = 0; i < masks.rows(); ++i) {
            double mass = 0.0;
            for (std::size_t j = 0; j < masks.cols(); ++j)
                mass += masks.val().at(i, j);
            (*zero_rows)[i] = mass == 0.0;
        }
    }
    Var pooled = core::matmul(masks, dense_feats);
    Var mass = core::add_scalar(core::row_sums(masks), eps);
    return unit_rows(core::div_colvec(pooled, mass));
}

Var semantic_loss(const Var& candidates, const Var& pooled,
                  const std::vector<std::size_t>& match, double tau) {
    if (tau <= 0.0)
        throw std::invalid_argument("semantic_loss: tau must be positive");
    const std::size_t m = pooled.rows();
    const std::size_t t = candidates.rows();
    if (match.size() != m)
        throw std::invalid_argument("semantic_loss: match size mismatch");
    if (candidates.cols() != pooled.cols())
        throw std::invalid_argument("semantic_loss: embedding dim mismatch");

    // logits[i,t] = z_t . F_i / tau
    Var logits = core::mul_scalar(
        core::matmul(pooled, candidates, false, true), 1.0 / tau);
    Mat onehot(m, t);
    for (std::size_t i = 0; i < m; ++i) {
        if (match[i] >= t)
            throw std::invalid_argument("semantic_loss: match index out of range");
        onehot.at(i, match[i]) = 1.0;
    }
    Var picked = core::row_sums(core::mul(logits, Var::constant(onehot)));
    Var per_row = core::sub(core::logsumexp_rows(logits), picked);
    return core::mean_all(per_row);
}

Var entropy_penalty(const std::vector<Var>& masks, double eps) {
    if (masks.empty())
        throw std::invalid_argument("entropy_penalty: empty batch");
    const std::size_t k = masks[0].rows();
    for (const Var& m : masks) {
        if (m.rows() != k)
            throw std::invalid_argument("entropy_penalty: slot count varies");
        for (double v : m.val().v)
            if (v < 0.0)
                throw std::invalid_argument(
                    "entropy_penalty: negative mask weight");
    }
    if (k <= 1) return Var::constant(Mat(1, 1, 0.0));

    const double inv_log_k = 1.0 / std::log(double(k));
    Var acc;
    for (const Var& m : masks) {
        Var mass = core::row_sums(m);  // K x 1
        Var denom = core::add_scalar(core::sum_all(mass), eps);
        Var p = core::scale_by_scalar(mass, core::pow_scalar(denom, -1.0));
        Var plogp = core::mul(p, core::log_(core::add_scalar(p, eps)));
        Var h = core::mul_scalar(core::sum_all(plogp), -inv_log_k);
        acc = acc.defined() ? core::add(acc, h) : h;
    }
    Var mean_h = core::mul_scalar(acc, 1.0 / double(masks.size()));
    return core::add_scalar(core::neg(mean_h), 1.0);
}

Var temporal_slot_loss(const Var& slots_t, const Var& slots_next, double tau) {
    if (tau <= 0.0)
        throw std::invalid_argument("temporal_slot_loss: tau must be positive");
    if (slots_t.rows() != slots_next.rows() ||
        slots_t.cols() != slots_next.cols())
        throw std::invalid_argument("temporal_slot_loss: shape mismatch");
    const std::size_t k = slots_t.rows();
    if (k <= 1) return Var::constant(Mat(1, 1, 0.0));

    Var a = unit_rows(slots_t);
    Var b = unit_rows(slots_next);
    Var sims = core::mul_scalar(core::matmul(a, b, false, true), 1.0 / tau);

    Mat eye(k, k);
    for (std::size_t i = 0; i < k; ++i) eye.at(i, i) = 1.0;
    const Var id = Var::constant(std::move(eye));

    Var diag_f = core::row_sums(core::mul(sims, id));
    Var fwd = core::mean_all(core::sub(core::logsumexp_rows(sims), diag_f));
    Var sims_t = core::transpose(sims);
    Var diag_b = core::row_sums(core::mul(sims_t, id));
    Var bwd = core::mean_all(core::sub(core::logsumexp_rows(sims_t), diag_b));
    return core::mul_scalar(core::add(fwd, bwd), 0.5);
}

Var overall_loss(const Var& recons, const Var& sem, const Var& pen,
                 const Var& temporal, const LossWeights& w,
                 LossReport* report) {
    auto check = [](const Var& v, const char* name) {
        if (!v.defined() || v.val().size() != 1 ||
            !std::isfinite(v.scalar()))
            throw std::runtime_error(std::string("overall_loss: non-finite ") +
                                     name + " term");
    };
    check(recons, "recons");
    check(sem, "sem");
    check(pen, "pen");
    check(temporal, "temporal");

    Var total = core::add(
        core::add(core::add(core::mul_scalar(recons, w.recons),
                            core::mul_scalar(sem, w.sem)),
                  core::mul_scalar(pen, w.pen)),
        core::mul_scalar(temporal, w.temporal));
    if (report) {
        report->recons = recons.scalar();
        report->sem = sem.scalar();
        report->pen = pen.scalar();
        report->temporal = temporal.scalar();
        report->total = total.scalar();
        report->weights = w;
    }
    return total;
}

SemanticProjection::SemanticProjection(std::size_t feature_dim,
                                       std::size_t text_dim, double tau,
                                       core::ParamStore& store,
                                       core::RngState& rng)
    : tau_(tau) {
    if (tau_ <= 0.0)
        throw std::invalid_argument("SemanticProjection: tau must be positive");
    w_ = store.create_gaussian("objectives/sem_proj/w", feature_dim, text_dim,
                               rng, 1.0 / std::sqrt(double(feature_dim)));
}

Var SemanticProjection::project(const Var& features) const {
    return core::matmul(features, w_);
}

}  // namespace storm::objectives
