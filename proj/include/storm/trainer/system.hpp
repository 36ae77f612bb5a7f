// Model assembly and checkpointing. A System owns every trainable module of
// one run: the frozen backbone, the slot module, the semantic projection,
// the temporal-consistency layer, and (in the joint phase) the policy.
#pragma once

#include <memory>
#include <optional>
#include <string>

#include "storm/core/optim.hpp"
#include "storm/features/features.hpp"
#include "storm/objectives/losses.hpp"
#include "storm/policy/policy.hpp"
#include "storm/slotcore/slotcore.hpp"
#include "storm/trainer/config.hpp"

namespace storm::trainer {

// One pre-norm transformer block over the K slot vectors, trained by the
// slot optimizer to serve the temporal consistency objective.
class TemporalHead {
public:
    TemporalHead(std::size_t dim, core::ParamStore& store, core::RngState& rng);
    core::Var refine(const core::Var& slots) const;

private:
    core::Var ln1_g_, ln1_b_, wq_, wk_, wv_, wo_;
    core::Var ln2_g_, ln2_b_, w1_, b1_, w2_, b2_;
    std::size_t dim_;
};

struct System {
    Config cfg;
    core::ParamStore store;
    std::unique_ptr<features::FeatureBackend> backbone;
    features::TextEmbedder embedder{32, 0};
    std::unique_ptr<slotcore::SlotCore> slots;
    std::unique_ptr<objectives::SemanticProjection> semproj;
    std::unique_ptr<TemporalHead> temporal;
    std::unique_ptr<policy::PolicyNet> policy_net;        // joint phase
    std::unique_ptr<policy::MaskEmbedder> mask_embedder;  // mask mode only
    std::optional<policy::ActionNormalizer> normalizer;

    static System build(const Config& cfg, bool with_policy);

    std::uint64_t backbone_hash() const;

    // Frozen features for one image, as a detached graph constant.
    core::Var encode_frame(const core::Image& image) const;
};

struct CheckpointExtra {
    std::uint64_t step = 0;
    std::map<std::string, core::Mat> optimizer_state;
    std::uint64_t optimizer_steps = 0;
    std::map<std::string, core::Mat> slot_optimizer_state;
    std::uint64_t slot_optimizer_steps = 0;
};

void save_checkpoint(const System& sys, const std::string& path,
                     const CheckpointExtra& extra = {});

// Overwrites matching parameters in place. `require_policy` demands the
// joint-phase tensors; a stage-1 checkpoint loaded into a joint system
// fills only the visual modules. Dimension compatibility is enforced via
// the stored visual hash and tensor shapes.
CheckpointExtra load_checkpoint(System& sys, const std::string& path,
                                bool require_policy);

}  // namespace storm::trainer
