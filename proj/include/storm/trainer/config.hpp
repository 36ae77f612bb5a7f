// Run configuration: one JSON document covers both training phases, the
// backbone, model dimensions, the environment, and evaluation. Parse errors
// and validation failures carry the JSON path of the offending field.
#pragma once

#include <cstdint>
#include <string>

#include "storm/features/features.hpp"
#include "storm/objectives/losses.hpp"
#include "storm/policy/policy.hpp"
#include "storm/slotcore/slotcore.hpp"

namespace storm::trainer {

struct PhaseConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 16;
    double base_lr = 4e-4;
    std::size_t warmup_steps = 200;
    std::size_t eval_every = 0;      // 0 disables periodic eval
    std::size_t snapshot_every = 500;
    objectives::LossWeights weights;
};

struct JointConfig : PhaseConfig {
    double slot_lr = 1e-5;
    std::string variant = "storm";       // storm | frozen | scratch
    std::string objective = "nll";       // nll | mse
    bool semantic_term = true;           // keep L_sem in the stage-2 visual loss
    double temporal_tau = 0.5;
};

struct EnvConfig {
    std::string task = "push";
    int difficulty = 1;
    int horizon = 100;
    std::size_t nd_distractors = 2;
    std::size_t demo_count = 200;
};

struct EvalConfig {
    std::size_t episodes = 50;
};

struct Config {
    std::uint64_t seed = 0;
    std::size_t text_dim = 32;
    double tau = 0.07;                   // contrastive temperature
    std::string mask_source = "attn";    // attn | alpha: masks fed to policy reprs
    std::string metric_mask_source = "alpha";  // masks scored by metrics
    bool pool_conditioned_only = true;   // Eq.2 pools conditioned slots only
    std::size_t pretrain_images = 2000;
    double eval_fraction = 0.1;

    features::BackendConfig backend;
    slotcore::SlotAttentionConfig slot;
    policy::PolicyConfig policy;
    PhaseConfig pretrain;
    JointConfig joint;
    EnvConfig env;
    EvalConfig eval;

    void validate() const;
    std::uint64_t hash() const;          // over the canonical JSON dump
    std::uint64_t visual_hash() const;   // dims a stage-2 run must share
    std::string to_json(int indent = 2) const;

    static Config from_json_text(const std::string& text,
                                 const std::string& origin = "<config>");
    static Config from_file(const std::string& path);
    // Desk-scale defaults (the constructor) vs the full-scale preset:
    // 300k/64/10k warmup at 4e-4, joint 150k at slot lr 1e-5.
    static Config paper_preset();
    static Config desk_preset();
    // Reduced sizes for fast tests.
    static Config smoke_preset();
};

// Linear warmup from 0 to base over warmup steps, then cosine decay to 0 at
// `steps`. Throws when step lies outside [0, steps].
double lr_at(std::size_t step, const PhaseConfig& phase);

}  // namespace storm::trainer
