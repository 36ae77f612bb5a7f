// Imitation policy: slot tokens enriched with mask-derived spatial features,
// task and proprioception tokens, a learnable [ACT] token, a transformer
// decoder over a 4-frame history (causal across frames, full within a
// frame), and a GMM head predicting a 10-step action chunk.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "storm/core/graph.hpp"
#include "storm/core/optim.hpp"
#include "storm/core/rng.hpp"

namespace storm::policy {

enum class MaskReprMode { None, Center, Bbox, Mask };

MaskReprMode mask_repr_mode_from_string(const std::string& s);
std::string to_string(MaskReprMode m);

struct PolicyConfig {
    std::size_t n_slots = 7;
    std::size_t slot_dim = 64;
    MaskReprMode mask_mode = MaskReprMode::Center;
    std::size_t mask_embed_dim = 16;  // D_m for mode == Mask
    std::size_t grid_h = 8, grid_w = 8;
    std::size_t text_dim = 32;
    std::size_t model_dim = 96;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t history = 4;        // H frames
    std::size_t chunk = 10;         // predicted action steps
    std::size_t action_dim = 3;     // A
    std::size_t n_components = 5;   // C
    double log_scale_min = -5.0;
    double log_scale_max = 2.0;

    std::size_t repr_dim() const;
    std::size_t seq_len() const { return history * (n_slots + 2) + 1; }
    std::size_t chunk_dim() const { return chunk * action_dim; }
    void validate() const;
};

// Spatial features from a slot mask stack (K x grid_h*grid_w, per-pixel
// simplex). center: soft center of mass; bbox: tight box over argmax
// support, degenerating to the soft center when a slot never wins; mask:
// shallow conv embedding of the hard mask (graph-valued, parameters belong
// to the policy); none: zero-width payload.
struct MaskReprResult {
    core::Mat payload;        // K x repr_dim (center/bbox/none)
    core::Var embedded;       // K x mask_embed_dim (mask mode only)
};

class MaskEmbedder {
public:
    MaskEmbedder(const PolicyConfig& cfg, core::ParamStore& store,
                 core::RngState& rng);
    core::Var embed(const core::Mat& hard_masks, std::size_t grid_h,
                    std::size_t grid_w) const;  // K x D_m

private:
    core::Var w1_, b1_, w2_, b2_, wf_, bf_;
    std::size_t flat_dim_;
};

core::Mat mask_centers(const core::Mat& soft_masks, std::size_t grid_h,
                       std::size_t grid_w);  // K x 2
core::Mat mask_bboxes(const core::Mat& soft_masks, std::size_t grid_h,
                      std::size_t grid_w);   // K x 4, ties to soft center

struct FrameInput {
    core::Var slots;              // K x D_s (detached upstream)
    core::Var repr;               // K x repr_dim; undefined when repr_dim = 0
    std::array<double, 3> proprio{};
};

struct SampleInput {
    std::vector<FrameInput> frames;  // 1..H, oldest -> newest
    std::vector<double> task_emb;    // D_t
};

struct GmmOut {
    core::Var weights_logits;  // 1 x C
    core::Var means;           // C x chunk_dim
    core::Var log_scales;      // C x chunk_dim (clamped)
};

// Plain-value distribution for inference and serialization.
struct GmmActionDistribution {
    core::Mat weights;     // 1 x C, simplex
    core::Mat means;       // C x chunk_dim
    core::Mat log_scales;  // C x chunk_dim
};

class PolicyNet {
public:
    PolicyNet(PolicyConfig cfg, core::ParamStore& store, core::RngState& rng);

    // Left-pads young episodes by repeating the earliest frame. Throws on
    // inconsistent slot counts.
    core::Var assemble_tokens(const SampleInput& input) const;

    GmmOut forward(const SampleInput& input) const;

    static GmmActionDistribution distribution(const GmmOut& out);

    const PolicyConfig& cfg() const { return cfg_; }

private:
    core::Var transformer(const core::Var& tokens) const;

    PolicyConfig cfg_;
    core::Var w_slot_, b_slot_, w_task_, b_task_, w_prop_, b_prop_;
    core::Var act_token_, pos_, tpos_;
    struct Layer {
        core::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        core::Var ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<Layer> layers_;
    core::Var final_ln_g_, final_ln_b_;
    core::Var head_w_w_, head_b_w_, head_w_m_, head_b_m_, head_w_s_, head_b_s_;
    core::Mat attn_mask_;  // additive, seq_len x seq_len
};

// -log sum_c w_c N(target; mu_c, diag sigma_c^2) via log-sum-exp.
core::Var gmm_nll(const GmmOut& out, const core::Mat& target);

// MSE between the mixture mean and the target (the alternative imitation
// objective behind a config flag).
core::Var gmm_mean_mse(const GmmOut& out, const core::Mat& target);

// Deterministic mode returns the mean of the highest-weight component
// (lowest index on ties); stochastic mode samples component then Gaussian.
std::vector<double> sample_action(const GmmActionDistribution& dist,
                                  core::RngState& rng, bool deterministic);

// First action step of a sampled chunk (receding horizon).
std::array<double, 3> first_step(const std::vector<double>& chunk,
                                 std::size_t action_dim);

// Per-dimension min/max normalization of actions to [-1, 1]; degenerate
// dimensions map to 0.
struct ActionNormalizer {
    std::vector<double> lo, hi;  // per action dim

    static ActionNormalizer fit(
        const std::vector<std::vector<std::array<double, 3>>>& action_tapes);
    std::vector<double> normalize_chunk(
        const std::vector<std::array<double, 3>>& chunk) const;
    std::array<double, 3> denormalize_step(
        const std::array<double, 3>& a) const;
};

}  // namespace storm::policy
