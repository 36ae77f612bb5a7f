#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "storm/trainer/trainer.hpp"

namespace storm::trainer {

using core::Mat;
using core::RngState;
using core::Var;

DemoData prepare_demo_data(const System& sys,
                           const std::vector<spriteworld::Trajectory>& demos) {
    if (demos.empty())
        throw std::invalid_argument("prepare_demo_data: no demonstrations");
    const std::set<std::string> lex = spriteworld::default_lexicon();

    DemoData out;
    std::vector<std::vector<std::array<double, 3>>> tapes;
    for (const spriteworld::Trajectory& t : demos) {
        if (t.actions.empty()) continue;
        DemoTrajCache c;
        const auto obs = spriteworld::replay_observations(t);
        for (std::size_t i = 0; i < t.actions.size(); ++i) {
            DemoStepCache sc;
            sc.features = sys.backbone->encode(obs[i].image).patches;
            sc.proprio = obs[i].proprio;
            c.steps.push_back(std::move(sc));
        }
        c.actions = t.actions;
        c.bundle =
            features::make_prompt_bundle(t.instruction, lex, sys.embedder);
        c.task_emb = sys.embedder.embed(t.instruction).vector;
        out.total_steps += t.actions.size();
        tapes.push_back(t.actions);
        out.trajs.push_back(std::move(c));
    }
    if (out.trajs.empty())
        throw std::invalid_argument("prepare_demo_data: only empty episodes");
    out.normalizer = policy::ActionNormalizer::fit(tapes);
    return out;
}

namespace {

struct SlotForward {
    std::vector<Var> slots;   // per frame, oldest -> newest (detached except
                              // possibly the newest)
    std::vector<Mat> masks;   // mask source rows for the policy reprs
    Var newest_slots_graph;   // graph-valued newest slots when training
    Var newest_attn_graph;
    slotcore::SlotInit init;
    bool has_graph = false;
};

// Runs the slot module over a window of frames with one shared slot-init
// draw. Older frames always run detached; the newest builds a graph only
// when the visual branch trains.
SlotForward slot_window(System& sys, const DemoTrajCache& traj,
                        std::size_t t, RngState& noise, bool visual_grad) {
    const std::size_t h = sys.cfg.policy.history;
    const std::size_t first = t + 1 >= h ? t + 1 - h : 0;
    SlotForward out;
    out.init = sys.slots->init_slots(traj.bundle, noise);

    for (std::size_t f = first; f <= t; ++f) {
        const bool newest = f == t;
        const Var feats = Var::constant(traj.steps[f].features);
        if (newest && visual_grad) {
            const slotcore::SlotSet set = sys.slots->attend(feats, out.init);
            out.newest_slots_graph = set.slots;
            out.newest_attn_graph = set.attn_masks;
            out.has_graph = true;
            out.slots.push_back(core::stopgrad(set.slots));
            out.masks.push_back(sys.cfg.mask_source == "alpha"
                                    ? sys.slots->decode(set.slots)
                                          .alpha_masks.val()
                                    : set.attn_masks.val());
        } else {
            core::NoGradGuard ng;
            const slotcore::SlotSet set = sys.slots->attend(feats, out.init);
            out.slots.push_back(set.slots);
            out.masks.push_back(sys.cfg.mask_source == "alpha"
                                    ? sys.slots->decode(set.slots)
                                          .alpha_masks.val()
                                    : set.attn_masks.val());
        }
    }
    return out;
}

policy::SampleInput make_policy_input(System& sys, const DemoTrajCache& traj,
                                      std::size_t t, const SlotForward& fwd) {
    const std::size_t first = t + 1 - fwd.slots.size();
    policy::SampleInput in;
    in.task_emb = traj.task_emb;
    for (std::size_t i = 0; i < fwd.slots.size(); ++i) {
        policy::FrameInput fr;
        fr.slots = fwd.slots[i];
        fr.proprio = traj.steps[first + i].proprio;
        switch (sys.cfg.policy.mask_mode) {
            case policy::MaskReprMode::None:
                break;
            case policy::MaskReprMode::Center:
                fr.repr = Var::constant(policy::mask_centers(
                    fwd.masks[i], sys.cfg.policy.grid_h,
                    sys.cfg.policy.grid_w));
                break;
            case policy::MaskReprMode::Bbox:
                fr.repr = Var::constant(policy::mask_bboxes(
                    fwd.masks[i], sys.cfg.policy.grid_h,
                    sys.cfg.policy.grid_w));
                break;
            case policy::MaskReprMode::Mask: {
                const metrics::MaskStack hard =
                    metrics::hard_masks_from_slots(fwd.masks[i]);
                Mat hm(hard.size(), fwd.masks[i].cols);
                for (std::size_t k = 0; k < hard.size(); ++k)
                    for (std::size_t j = 0; j < hard[k].size(); ++j)
                        hm.at(k, j) = hard[k][j];
                fr.repr = sys.mask_embedder->embed(hm, sys.cfg.policy.grid_h,
                                                   sys.cfg.policy.grid_w);
                break;
            }
        }
        in.frames.push_back(std::move(fr));
    }
    return in;
}

Mat target_chunk(const System& sys, const DemoData& demos,
                 const DemoTrajCache& traj, std::size_t t) {
    std::vector<std::array<double, 3>> chunk;
    for (std::size_t i = 0; i < sys.cfg.policy.chunk; ++i) {
        const std::size_t idx = std::min(t + i, traj.actions.size() - 1);
        chunk.push_back(traj.actions[idx]);
    }
    const std::vector<double> norm = demos.normalizer.normalize_chunk(chunk);
    Mat target(1, norm.size());
    target.v = norm;
    return target;
}

}  // namespace

Stage2Result train_stage2(System& sys, const DemoData& demos,
                          const std::string& log_path) {
    if (!sys.policy_net)
        throw std::invalid_argument("train_stage2: system built without policy");
    const JointConfig& jc = sys.cfg.joint;
    sys.normalizer = demos.normalizer;

    core::AdamW policy_opt(named_group(sys.store, "policy/"), {});
    const bool slots_train = jc.variant != "frozen";
    core::AdamW slot_opt(
        [&] {
            auto g = named_group(sys.store, "slotcore/");
            for (auto& p : named_group(sys.store, "objectives/")) g.push_back(p);
            for (auto& p : named_group(sys.store, "temporal/")) g.push_back(p);
            return g;
        }(),
        {});

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log)
            throw std::runtime_error("train_stage2: cannot open log " +
                                     log_path);
    }

    const std::uint64_t backbone0 = sys.backbone_hash();
    Stage2Result result;

    for (std::size_t step = 0; step < jc.steps; ++step) {
        RngState batch_rng(RngState::mix(sys.cfg.seed, 0x2000000 + step));
        Var policy_acc, recons_acc, temporal_acc;
        std::vector<Var> entropy_masks;
        std::vector<Var> sem_pooled;
        std::vector<std::size_t> sem_match;
        std::vector<std::string> noun_order;
        std::map<std::string, std::size_t> noun_index;

        for (std::size_t b = 0; b < jc.batch_size; ++b) {
            const DemoTrajCache& traj =
                demos.trajs[batch_rng.uniform_int(demos.trajs.size())];
            const std::size_t t = batch_rng.uniform_int(traj.actions.size());
            RngState noise = batch_rng.fork(0x57EB + b);

            SlotForward fwd = slot_window(sys, traj, t, noise, slots_train);

            // imitation objective on detached inputs
            const policy::SampleInput input =
                make_policy_input(sys, traj, t, fwd);
            const policy::GmmOut out = sys.policy_net->forward(input);
            const Mat target = target_chunk(sys, demos, traj, t);
            Var ploss = jc.objective == "mse"
                            ? policy::gmm_mean_mse(out, target)
                            : policy::gmm_nll(out, target);
            policy_acc = policy_acc.defined() ? core::add(policy_acc, ploss)
                                              : ploss;

            // visual objective on the newest frame
            if (slots_train && fwd.has_graph) {
                const Var feats = Var::constant(traj.steps[t].features);
                const slotcore::Reconstruction rec =
                    sys.slots->decode(fwd.newest_slots_graph);
                Var r = objectives::recons_loss(feats, rec.features_hat);
                recons_acc =
                    recons_acc.defined() ? core::add(recons_acc, r) : r;
                entropy_masks.push_back(fwd.newest_attn_graph);

                std::size_t n_cond = 0;
                for (bool f : fwd.init.conditioned) n_cond += f;
                if (jc.semantic_term && n_cond > 0) {
                    const Var masks =
                        core::slice_rows(fwd.newest_attn_graph, 0, n_cond);
                    const Var dense = sys.semproj->project(feats);
                    sem_pooled.push_back(objectives::mask_pool(masks, dense));
                    for (std::size_t i = 0; i < n_cond; ++i) {
                        auto [it, fresh] = noun_index.emplace(
                            traj.bundle.nouns[i], noun_order.size());
                        if (fresh) noun_order.push_back(traj.bundle.nouns[i]);
                        sem_match.push_back(it->second);
                    }
                }

                if (fwd.slots.size() >= 2) {
                    const Var prev = fwd.slots[fwd.slots.size() - 2];
                    const Var z_prev = sys.temporal->refine(prev);
                    const Var z_cur =
                        sys.temporal->refine(fwd.newest_slots_graph);
                    Var tl = objectives::temporal_slot_loss(z_prev, z_cur,
                                                            jc.temporal_tau);
                    temporal_acc = temporal_acc.defined()
                                       ? core::add(temporal_acc, tl)
                                       : tl;
                }
            }
        }

        Var policy_loss =
            core::mul_scalar(policy_acc, 1.0 / double(jc.batch_size));
        if (!std::isfinite(policy_loss.scalar()))
            throw std::runtime_error("train_stage2: policy loss diverged at step " +
                                     std::to_string(step));
        core::backward(policy_loss);
        policy_opt.step(lr_at(step, jc));

        objectives::LossReport vreport;
        if (slots_train && recons_acc.defined()) {
            const double inv = 1.0 / double(jc.batch_size);
            Var recons = core::mul_scalar(recons_acc, inv);
            Var pen =
                objectives::entropy_penalty(entropy_masks, sys.cfg.slot.epsilon);
            Var sem = Var::constant(Mat(1, 1, 0.0));
            if (!sem_pooled.empty()) {
                Mat cands(noun_order.size(), sys.cfg.text_dim);
                for (std::size_t i = 0; i < noun_order.size(); ++i) {
                    const auto e = sys.embedder.embed(noun_order[i]);
                    std::copy(e.vector.begin(), e.vector.end(), cands.row(i));
                }
                const Var pooled = sem_pooled.size() == 1
                                       ? sem_pooled[0]
                                       : core::concat_rows(sem_pooled);
                sem = objectives::semantic_loss(
                    Var::constant(std::move(cands)), pooled, sem_match,
                    sys.cfg.tau);
            }
            Var temporal = temporal_acc.defined()
                               ? core::mul_scalar(temporal_acc,
                                                  1.0 / double(jc.batch_size))
                               : Var::constant(Mat(1, 1, 0.0));
            Var vtotal = objectives::overall_loss(recons, sem, pen, temporal,
                                                  jc.weights, &vreport);
            core::backward(vtotal);
            slot_opt.step(jc.slot_lr);
            result.last_visual = vreport;
        }

        if (step == 0) result.first_policy_loss = policy_loss.scalar();
        result.last_policy_loss = policy_loss.scalar();
        ++result.steps_run;

        if (log.is_open()) {
            log << "{\"step\":" << step
                << ",\"policy_loss\":" << policy_loss.scalar()
                << ",\"policy_lr\":" << lr_at(step, jc)
                << ",\"slot_lr\":" << (slots_train ? jc.slot_lr : 0.0);
            if (slots_train && recons_acc.defined())
                log << ",\"visual\":" << vreport.to_json();
            log << "}\n";
        }
    }

    if (sys.backbone_hash() != backbone0)
        throw std::logic_error("train_stage2: frozen backbone changed");

    result.extra.step = result.steps_run;
    result.extra.optimizer_state = policy_opt.state_tensors();
    result.extra.optimizer_steps = policy_opt.steps_taken();
    result.extra.slot_optimizer_state = slot_opt.state_tensors();
    result.extra.slot_optimizer_steps = slot_opt.steps_taken();
    return result;
}

double policy_grad_magnitude(System& sys, const DemoData& demos,
                             const std::string& param_prefix,
                             std::size_t batch_size) {
    if (!sys.policy_net)
        throw std::invalid_argument("policy_grad_magnitude: no policy");
    sys.store.zero_grads();
    RngState batch_rng(RngState::mix(sys.cfg.seed, 0xC0FFEE));
    Var acc;
    for (std::size_t b = 0; b < batch_size; ++b) {
        const DemoTrajCache& traj =
            demos.trajs[batch_rng.uniform_int(demos.trajs.size())];
        const std::size_t t = batch_rng.uniform_int(traj.actions.size());
        RngState noise = batch_rng.fork(b);
        // visual_grad on: the graph exists, so any leak would show up
        SlotForward fwd = slot_window(sys, traj, t, noise, true);
        const policy::SampleInput input = make_policy_input(sys, traj, t, fwd);
        const policy::GmmOut out = sys.policy_net->forward(input);
        const Mat target = target_chunk(sys, demos, traj, t);
        Var ploss = policy::gmm_nll(out, target);
        acc = acc.defined() ? core::add(acc, ploss) : ploss;
    }
    core::backward(core::mul_scalar(acc, 1.0 / double(batch_size)));

    double mag = 0.0;
    for (const auto& name : sys.store.names(param_prefix)) {
        const Mat& g = sys.store.get(name).grad();
        for (double x : g.v) mag += std::fabs(x);
    }
    sys.store.zero_grads();
    return mag;
}

}  // namespace storm::trainer
