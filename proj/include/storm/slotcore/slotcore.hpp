// Language-conditioned Slot Attention over frozen patch features, plus the
// spatial-broadcast MLP decoder that reconstructs the feature map and yields
// per-slot alpha masks. Attention normalizes over the slot axis so slots
// compete for patches; slot updates use a GRU followed by a residual MLP.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/core/graph.hpp"
#include "storm/core/optim.hpp"
#include "storm/core/rng.hpp"
#include "storm/features/features.hpp"
#include "storm/metrics/discovery.hpp"

namespace storm::slotcore {

struct SlotAttentionConfig {
    std::size_t n_slots = 7;        // K
    std::size_t slot_dim = 256;     // D_s
    std::size_t n_iters = 3;        // attention iterations (0 = identity)
    double epsilon = 1e-8;
    std::size_t n_conditioned = 4;  // slots eligible for noun conditioning
    std::size_t feature_dim = 32;   // D_f
    std::size_t text_dim = 32;      // D_t
    std::size_t n_patches = 64;     // N (fixes the decoder position table)
    std::size_t mlp_hidden = 0;     // 0 -> slot_dim
    std::size_t decoder_hidden = 64;
    std::size_t decoder_layers = 3; // linear layers in the decoder MLP, >= 2

    void validate() const;
};

struct SlotInit {
    core::Var slots;  // K x D_s
    std::vector<bool> conditioned;
    std::size_t truncated_nouns = 0;  // nouns dropped beyond n_conditioned
};

struct SlotSet {
    core::Var slots;       // K x D_s
    core::Var attn_masks;  // K x N, per-patch simplex over slots
    std::vector<bool> conditioned;
};

struct Reconstruction {
    core::Var features_hat;  // N x D_f
    core::Var alpha_masks;   // K x N, per-patch simplex over slots
};

class SlotCore {
public:
    // Creates parameters under "slotcore/" in the store.
    SlotCore(SlotAttentionConfig cfg, core::ParamStore& store,
             core::RngState& rng);

    // Conditioned slots are a learned projection of the noun embedding plus
    // a learned offset (no noise); the rest sample from a learned Gaussian.
    // Extra nouns beyond n_conditioned are truncated and counted.
    SlotInit init_slots(const features::PromptBundle& bundle,
                        core::RngState& rng) const;

    SlotSet attend(const core::Var& features, const SlotInit& init) const;

    Reconstruction decode(const core::Var& slots) const;

    const SlotAttentionConfig& cfg() const { return cfg_; }

private:
    core::Var gru(const core::Var& x, const core::Var& h) const;

    SlotAttentionConfig cfg_;
    // attention
    core::Var norm_in_g_, norm_in_b_;
    core::Var wk_, wv_, wq_;
    core::Var norm_slots_g_, norm_slots_b_;
    core::Var gru_wz_, gru_uz_, gru_bz_;
    core::Var gru_wr_, gru_ur_, gru_br_;
    core::Var gru_wn_, gru_un_, gru_bnx_, gru_bnh_;
    core::Var norm_mlp_g_, norm_mlp_b_;
    core::Var mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
    // conditioning
    core::Var cond_proj_, cond_bias_, init_mu_, init_log_sigma_;
    // decoder
    core::Var dec_pos_;
    std::vector<core::Var> dec_w_, dec_b_;
};

// Nearest-neighbor upsampling of K x (grid_h*grid_w) masks to
// K x (out_h*out_w).
core::Mat masks_to_grid(const core::Mat& masks, std::size_t grid_h,
                        std::size_t grid_w, std::size_t out_h,
                        std::size_t out_w);

}  // namespace storm::slotcore
