// Orchestration of the two training phases, the evaluation loops, and the
// data caches they consume. Stage 1 fits the slot module and semantic
// projection on rendered scenes; stage 2 trains the policy by imitation
// while the visual side adapts at a reduced rate behind a feature-level
// gradient detachment.
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "storm/metrics/discovery.hpp"
#include "storm/spriteworld/world.hpp"
#include "storm/trainer/system.hpp"

namespace storm::trainer {

// ---------------------------------------------------------------------------
// stage 1

struct PretrainSampleCache {
    core::Mat features;  // N x D_f, frozen
    features::PromptBundle bundle;
    metrics::Segmentation gt;
    std::vector<int> gt_class_ids;        // per instance label 1..G
    std::vector<int> object_labels;       // instance label per scene object
    std::vector<std::string> object_nouns;  // color word per scene object
    int goal_label = 0;
    std::size_t grid_h = 8, grid_w = 8;
};

struct PretrainData {
    std::vector<PretrainSampleCache> train;
    std::vector<PretrainSampleCache> eval;
};

PretrainData prepare_pretrain_data(
    const System& sys, const std::vector<spriteworld::PretrainSample>& samples,
    double eval_fraction);

struct DiscoveryEval {
    metrics::MetricReport report;
    double conditioned_iou = 0.0;
    double unconditioned_iou = 0.0;
    std::size_t pairs_scored = 0;
};

DiscoveryEval evaluate_discovery(const System& sys,
                                 const std::vector<PretrainSampleCache>& data,
                                 const std::string& mask_source);

struct Stage1Result {
    std::size_t steps_run = 0;
    objectives::LossReport first_report;
    objectives::LossReport last_report;
    double final_eval_fg_ari = -1.0;
    CheckpointExtra extra;
};

// Optimizes slotcore + objectives parameters (backbone frozen) on the
// overall loss; aborts with the last good snapshot if the loss diverges.
Stage1Result pretrain_stage1(System& sys, const PretrainData& data,
                             const std::string& log_path = "",
                             const std::string& snapshot_path = "");

// Direct forward evaluation of the overall loss on one batch (no update);
// used to pin the step-0 training loss to an independent forward pass.
objectives::LossReport stage1_batch_loss(System& sys, const PretrainData& data,
                                         std::size_t step);

// ---------------------------------------------------------------------------
// stage 2

struct DemoStepCache {
    core::Mat features;
    std::array<double, 3> proprio{};
};

struct DemoTrajCache {
    std::vector<DemoStepCache> steps;  // observation before each action
    std::vector<std::array<double, 3>> actions;
    features::PromptBundle bundle;
    std::vector<double> task_emb;
};

struct DemoData {
    std::vector<DemoTrajCache> trajs;
    policy::ActionNormalizer normalizer;
    std::size_t total_steps = 0;
};

DemoData prepare_demo_data(const System& sys,
                           const std::vector<spriteworld::Trajectory>& demos);

struct Stage2Result {
    std::size_t steps_run = 0;
    double first_policy_loss = 0.0;
    double last_policy_loss = 0.0;
    objectives::LossReport last_visual;
    CheckpointExtra extra;
};

// Two optimizers in lockstep: the policy optimizer on the imitation
// objective, and (unless the variant freezes them) the slot optimizer on
// the visual loss at the reduced slot lr. Backbone features are detached
// before both paths.
Stage2Result train_stage2(System& sys, const DemoData& demos,
                          const std::string& log_path = "");

// Gradient of the policy loss w.r.t. a parameter group on one batch;
// the detachment contract asserts this is identically zero for slotcore.
double policy_grad_magnitude(System& sys, const DemoData& demos,
                             const std::string& param_prefix,
                             std::size_t batch_size = 4);

// ---------------------------------------------------------------------------
// rollouts

using Controller =
    std::function<spriteworld::Action(const spriteworld::Env&,
                                      const spriteworld::Observation&)>;
using ControllerFactory = std::function<Controller(std::uint64_t episode_seed)>;

struct EvalResult {
    double success_rate = 0.0;
    std::size_t episodes = 0;
    std::vector<bool> successes;
};

// Shared episode harness: scene generation, optional ND distractor
// injection, rollout, success accounting, optional JSONL logging.
EvalResult run_episodes(const EnvConfig& env_cfg, std::size_t episodes,
                        std::uint64_t seed, const std::string& mode,
                        const ControllerFactory& make_controller,
                        const std::string& log_path = "");

EvalResult evaluate_policy(const System& sys, const EnvConfig& env_cfg,
                           std::size_t episodes, std::uint64_t seed,
                           const std::string& mode,
                           const std::string& log_path = "");

EvalResult evaluate_expert(const EnvConfig& env_cfg, std::size_t episodes,
                           std::uint64_t seed, const std::string& mode);

EvalResult evaluate_random(const EnvConfig& env_cfg, std::size_t episodes,
                           std::uint64_t seed, const std::string& mode);

}  // namespace storm::trainer
