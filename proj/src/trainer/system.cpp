#include "storm/trainer/system.hpp"

#include <cmath>
#include <stdexcept>

#include "storm/core/archive.hpp"

namespace storm::trainer {

using core::Mat;
using core::ParamStore;
using core::RngState;
using core::Var;

TemporalHead::TemporalHead(std::size_t dim, ParamStore& store, RngState& rng)
    : dim_(dim) {
    const double xv = 1.0 / std::sqrt(double(dim));
    ln1_g_ = store.create_full("temporal/ln1/g", 1, dim, 1.0);
    ln1_b_ = store.create_zeros("temporal/ln1/b", 1, dim);
    wq_ = store.create_gaussian("temporal/wq", dim, dim, rng, xv);
    wk_ = store.create_gaussian("temporal/wk", dim, dim, rng, xv);
    wv_ = store.create_gaussian("temporal/wv", dim, dim, rng, xv);
    wo_ = store.create_gaussian("temporal/wo", dim, dim, rng, xv);
    ln2_g_ = store.create_full("temporal/ln2/g", 1, dim, 1.0);
    ln2_b_ = store.create_zeros("temporal/ln2/b", 1, dim);
    w1_ = store.create_gaussian("temporal/mlp/w1", dim, 2 * dim, rng, xv);
    b1_ = store.create_zeros("temporal/mlp/b1", 1, 2 * dim);
    w2_ = store.create_gaussian("temporal/mlp/w2", 2 * dim, dim, rng,
                                1.0 / std::sqrt(2.0 * double(dim)));
    b2_ = store.create_zeros("temporal/mlp/b2", 1, dim);
}

Var TemporalHead::refine(const Var& slots) const {
    using namespace core;
    const double scale = 1.0 / std::sqrt(double(dim_));
    Var h = layer_norm_rows(slots, ln1_g_, ln1_b_);
    Var q = matmul(h, wq_);
    Var k = matmul(h, wk_);
    Var v = matmul(h, wv_);
    Var attn = softmax_rows(mul_scalar(matmul(q, k, false, true), scale));
    Var x = add(slots, matmul(matmul(attn, v), wo_));
    Var m = layer_norm_rows(x, ln2_g_, ln2_b_);
    m = gelu(add_rowvec(matmul(m, w1_), b1_));
    return add(x, add_rowvec(matmul(m, w2_), b2_));
}

System System::build(const Config& cfg, bool with_policy) {
    cfg.validate();
    System sys;
    sys.cfg = cfg;
    sys.backbone = features::make_backend(cfg.backend);
    sys.embedder = features::TextEmbedder(cfg.text_dim, cfg.seed);

    RngState rng(RngState::mix(cfg.seed, 0x5354524dull));
    sys.slots = std::make_unique<slotcore::SlotCore>(cfg.slot, sys.store, rng);
    sys.semproj = std::make_unique<objectives::SemanticProjection>(
        cfg.slot.feature_dim, cfg.text_dim, cfg.tau, sys.store, rng);
    sys.temporal =
        std::make_unique<TemporalHead>(cfg.slot.slot_dim, sys.store, rng);
    if (with_policy) {
        sys.policy_net =
            std::make_unique<policy::PolicyNet>(cfg.policy, sys.store, rng);
        if (cfg.policy.mask_mode == policy::MaskReprMode::Mask)
            sys.mask_embedder = std::make_unique<policy::MaskEmbedder>(
                cfg.policy, sys.store, rng);
    }
    return sys;
}

std::uint64_t System::backbone_hash() const {
    if (auto* toy = dynamic_cast<const features::ToyConvBackend*>(
            backbone.get()))
        return toy->param_hash();
    // The synthetic backend's projection is fixed by its seed; hash its id.
    return core::fnv1a(backbone->id());
}

Var System::encode_frame(const core::Image& image) const {
    const features::FeatureMap fm = backbone->encode(image);
    return Var::constant(fm.patches);
}

void save_checkpoint(const System& sys, const std::string& path,
                     const CheckpointExtra& extra) {
    core::Archive a;
    for (const auto& [name, var] : sys.store.all()) a.tensors[name] = var.val();
    if (auto* toy =
            dynamic_cast<const features::ToyConvBackend*>(sys.backbone.get()))
        for (const auto& [name, var] : toy->params().all())
            a.tensors[name] = var.val();
    for (const auto& [name, m] : extra.optimizer_state)
        a.tensors["opt/" + name] = m;
    for (const auto& [name, m] : extra.slot_optimizer_state)
        a.tensors["slot_opt/" + name] = m;
    a.meta_u64["step"] = extra.step;
    a.meta_u64["optimizer_steps"] = extra.optimizer_steps;
    a.meta_u64["slot_optimizer_steps"] = extra.slot_optimizer_steps;
    a.meta_u64["config_hash"] = sys.cfg.hash();
    a.meta_u64["visual_hash"] = sys.cfg.visual_hash();
    a.meta_u64["has_policy"] = sys.policy_net ? 1 : 0;
    a.meta_str["config"] = sys.cfg.to_json(-1);
    if (sys.normalizer) {
        Mat lo(1, 3), hi(1, 3);
        for (int d = 0; d < 3; ++d) {
            lo.v[d] = sys.normalizer->lo[d];
            hi.v[d] = sys.normalizer->hi[d];
        }
        a.tensors["norm/action_lo"] = lo;
        a.tensors["norm/action_hi"] = hi;
    }
    a.save(path);
}

CheckpointExtra load_checkpoint(System& sys, const std::string& path,
                                bool require_policy) {
    const core::Archive a = core::Archive::load(path);
    if (a.meta("visual_hash") != sys.cfg.visual_hash())
        throw std::runtime_error(
            "checkpoint: visual configuration mismatch with " + path);
    if (require_policy && a.meta("has_policy") == 0)
        throw std::runtime_error(
            "checkpoint: " + path + " holds no policy parameters");

    for (const auto& [name, var] : sys.store.all()) {
        auto it = a.tensors.find(name);
        if (it == a.tensors.end()) {
            const bool policy_side = name.rfind("policy/", 0) == 0 ||
                                     name.rfind("temporal/", 0) == 0;
            if (policy_side && a.meta("has_policy") == 0) continue;
            throw std::runtime_error("checkpoint: missing tensor " + name);
        }
        if (!it->second.same_shape(var.val()))
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        const_cast<Var&>(var).mutable_val() = it->second;
    }
    if (auto* toy =
            dynamic_cast<features::ToyConvBackend*>(sys.backbone.get()))
        for (const auto& [name, var] : toy->params().all()) {
            auto it = a.tensors.find(name);
            if (it == a.tensors.end())
                throw std::runtime_error("checkpoint: missing tensor " + name);
            const_cast<Var&>(var).mutable_val() = it->second;
        }

    if (a.has_tensor("norm/action_lo")) {
        policy::ActionNormalizer n;
        n.lo.assign(3, 0.0);
        n.hi.assign(3, 0.0);
        for (int d = 0; d < 3; ++d) {
            n.lo[d] = a.tensor("norm/action_lo").v[d];
            n.hi[d] = a.tensor("norm/action_hi").v[d];
        }
        sys.normalizer = n;
    }

    CheckpointExtra extra;
    extra.step = a.meta("step");
    extra.optimizer_steps = a.meta("optimizer_steps");
    extra.slot_optimizer_steps = a.meta("slot_optimizer_steps");
    for (const auto& [name, m] : a.tensors) {
        if (name.rfind("opt/", 0) == 0)
            extra.optimizer_state[name.substr(4)] = m;
        else if (name.rfind("slot_opt/", 0) == 0)
            extra.slot_optimizer_state[name.substr(9)] = m;
    }
    return extra;
}

}  // namespace storm::trainer
