#include <deque>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "storm/trainer/trainer.hpp"

namespace storm::trainer {

using core::Mat;
using core::RngState;
using core::Var;

EvalResult run_episodes(const EnvConfig& env_cfg, std::size_t episodes,
                        std::uint64_t seed, const std::string& mode,
                        const ControllerFactory& make_controller,
                        const std::string& log_path) {
    if (episodes == 0)
        throw std::invalid_argument("run_episodes: need at least one episode");
    if (mode != "ID" && mode != "ND")
        throw std::invalid_argument("run_episodes: mode must be ID|ND");

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log)
            throw std::runtime_error("run_episodes: cannot open log " +
                                     log_path);
    }

    EvalResult result;
    result.episodes = episodes;
    std::size_t wins = 0;
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        const std::uint64_t ep_seed = RngState::mix(seed, 0xE9 + ep);
        spriteworld::GeneratedScene gs = spriteworld::generate_scene(
            env_cfg.task, env_cfg.difficulty, ep_seed);
        if (mode == "ND")
            gs.spec = spriteworld::inject_distractors(
                gs.spec, "ND", env_cfg.nd_distractors,
                RngState::mix(ep_seed, 0x4e44));

        spriteworld::Env env(gs.spec, env_cfg.horizon, gs.instruction);
        Controller controller = make_controller(ep_seed);
        spriteworld::Observation obs = env.observe();
        int t = 0;
        while (!env.done()) {
            const spriteworld::Action a = controller(env, obs);
            if (log.is_open()) {
                nlohmann::json j;
                j["episode"] = ep;
                j["step"] = t;
                j["obs_id"] = RngState::mix(ep_seed, std::uint64_t(t));
                j["action"] = {a.dx, a.dy, a.grip};
                log << j.dump() << "\n";
            }
            obs = env.step(a);
            ++t;
        }
        const bool win = env.success();
        wins += win ? 1 : 0;
        result.successes.push_back(win);
        if (log.is_open()) {
            nlohmann::json j;
            j["episode"] = ep;
            j["success"] = win;
            j["steps"] = t;
            log << j.dump() << "\n";
        }
    }
    result.success_rate = double(wins) / double(episodes);
    return result;
}

namespace {

// Rolling rollout state for the learned policy: per-episode slot init
// noise, cached per-frame slots and mask payloads, receding-horizon action
// selection (only the first chunk step executes each cycle).
struct PolicyRollout {
    const System& sys;
    features::PromptBundle bundle;
    std::vector<double> task_emb;
    RngState init_noise;
    std::unique_ptr<slotcore::SlotInit> init;
    std::deque<policy::FrameInput> window;

    PolicyRollout(const System& s, std::uint64_t ep_seed)
        : sys(s), init_noise(RngState::mix(ep_seed, 0x1417)) {}

    spriteworld::Action act(const spriteworld::Env&,
                            const spriteworld::Observation& obs) {
        core::NoGradGuard ng;
        if (!init) {
            bundle = features::make_prompt_bundle(
                obs.instruction, spriteworld::default_lexicon(), sys.embedder);
            task_emb = sys.embedder.embed(obs.instruction).vector;
            init = std::make_unique<slotcore::SlotInit>(
                sys.slots->init_slots(bundle, init_noise));
        }
        const Var feats = sys.encode_frame(obs.image);
        const slotcore::SlotSet set = sys.slots->attend(feats, *init);
        const Mat masks = sys.cfg.mask_source == "alpha"
                              ? sys.slots->decode(set.slots).alpha_masks.val()
                              : set.attn_masks.val();

        policy::FrameInput fr;
        fr.slots = set.slots;
        fr.proprio = obs.proprio;
        switch (sys.cfg.policy.mask_mode) {
            case policy::MaskReprMode::None:
                break;
            case policy::MaskReprMode::Center:
                fr.repr = Var::constant(policy::mask_centers(
                    masks, sys.cfg.policy.grid_h, sys.cfg.policy.grid_w));
                break;
            case policy::MaskReprMode::Bbox:
                fr.repr = Var::constant(policy::mask_bboxes(
                    masks, sys.cfg.policy.grid_h, sys.cfg.policy.grid_w));
                break;
            case policy::MaskReprMode::Mask: {
                const metrics::MaskStack hard =
                    metrics::hard_masks_from_slots(masks);
                Mat hm(hard.size(), masks.cols);
                for (std::size_t k = 0; k < hard.size(); ++k)
                    for (std::size_t j = 0; j < hard[k].size(); ++j)
                        hm.at(k, j) = hard[k][j];
                fr.repr = sys.mask_embedder->embed(
                    hm, sys.cfg.policy.grid_h, sys.cfg.policy.grid_w);
                break;
            }
        }
        window.push_back(std::move(fr));
        while (window.size() > sys.cfg.policy.history) window.pop_front();

        policy::SampleInput in;
        in.task_emb = task_emb;
        for (const auto& f : window) in.frames.push_back(f);
        const policy::GmmOut out = sys.policy_net->forward(in);
        const policy::GmmActionDistribution dist =
            policy::PolicyNet::distribution(out);
        RngState sample_rng(0);  // unused in deterministic mode
        const std::vector<double> chunk =
            policy::sample_action(dist, sample_rng, true);
        const std::array<double, 3> norm_step =
            policy::first_step(chunk, sys.cfg.policy.action_dim);
        const std::array<double, 3> a =
            sys.normalizer ? sys.normalizer->denormalize_step(norm_step)
                           : norm_step;
        return spriteworld::Action::from_array(a);
    }
};

}  // namespace

EvalResult evaluate_policy(const System& sys, const EnvConfig& env_cfg,
                           std::size_t episodes, std::uint64_t seed,
                           const std::string& mode,
                           const std::string& log_path) {
    if (!sys.policy_net)
        throw std::invalid_argument("evaluate_policy: system has no policy");
    return run_episodes(
        env_cfg, episodes, seed, mode,
        [&sys](std::uint64_t ep_seed) -> Controller {
            auto state = std::make_shared<PolicyRollout>(sys, ep_seed);
            return [state](const spriteworld::Env& env,
                           const spriteworld::Observation& obs) {
                return state->act(env, obs);
            };
        },
        log_path);
}

EvalResult evaluate_expert(const EnvConfig& env_cfg, std::size_t episodes,
                           std::uint64_t seed, const std::string& mode) {
    return run_episodes(env_cfg, episodes, seed, mode,
                        [](std::uint64_t) -> Controller {
                            return [](const spriteworld::Env& env,
                                      const spriteworld::Observation&) {
                                return spriteworld::scripted_expert(env);
                            };
                        });
}

EvalResult evaluate_random(const EnvConfig& env_cfg, std::size_t episodes,
                           std::uint64_t seed, const std::string& mode) {
    return run_episodes(
        env_cfg, episodes, seed, mode, [](std::uint64_t ep_seed) -> Controller {
            auto rng = std::make_shared<RngState>(
                RngState::mix(ep_seed, 0xBAD));
            return [rng](const spriteworld::Env&,
                         const spriteworld::Observation&) {
                return spriteworld::Action{rng->uniform(-0.05, 0.05),
                                           rng->uniform(-0.05, 0.05),
                                           rng->uniform() < 0.5 ? 1.0 : 0.0};
            };
        });
}

}  // namespace storm::trainer
