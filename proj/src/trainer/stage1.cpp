#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "storm/core/archive.hpp"
#include "storm/trainer/trainer.hpp"

namespace storm::trainer {

using core::Mat;
using core::RngState;
using core::Var;

namespace {

std::set<std::string> lexicon() { return spriteworld::default_lexicon(); }

}  // namespace

PretrainData prepare_pretrain_data(
    const System& sys, const std::vector<spriteworld::PretrainSample>& samples,
    double eval_fraction) {
    if (samples.size() < 2)
        throw std::invalid_argument("prepare_pretrain_data: need >= 2 samples");
    const std::set<std::string> lex = lexicon();

    PretrainData out;
    const std::size_t n_eval = std::max<std::size_t>(
        1, std::size_t(double(samples.size()) * eval_fraction));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const spriteworld::PretrainSample& s = samples[i];
        const spriteworld::RenderResult r = spriteworld::render_scene(s.spec);
        PretrainSampleCache c;
        const features::FeatureMap fm = sys.backbone->encode(r.image);
        c.features = fm.patches;
        c.grid_h = fm.grid_h;
        c.grid_w = fm.grid_w;
        c.bundle = features::make_prompt_bundle(s.caption, lex, sys.embedder);
        c.gt = r.gt_instances;
        c.gt_class_ids = r.instance_class_ids;
        c.object_labels = r.object_labels;
        c.goal_label = r.goal_label;
        for (const auto& o : s.spec.objects) c.object_nouns.push_back(o.color);
        if (i + n_eval >= samples.size())
            out.eval.push_back(std::move(c));
        else
            out.train.push_back(std::move(c));
    }
    return out;
}

namespace {

struct SemBatchAccum {
    std::vector<Var> pooled;               // per-sample M_i x D_t blocks
    std::vector<std::string> noun_order;   // unique nouns in first-seen order
    std::map<std::string, std::size_t> noun_index;
    std::vector<std::size_t> match;

    void add(const System& sys, const features::PromptBundle& bundle,
             std::size_t n_cond, const Var& cond_masks, const Var& dense) {
        if (n_cond == 0) return;
        pooled.push_back(objectives::mask_pool(cond_masks, dense));
        for (std::size_t i = 0; i < n_cond; ++i) {
            const std::string& noun = bundle.nouns[i];
            auto [it, fresh] = noun_index.emplace(noun, noun_order.size());
            if (fresh) noun_order.push_back(noun);
            match.push_back(it->second);
        }
        (void)sys;
    }

    Var loss(const System& sys, double tau) const {
        if (pooled.empty()) return Var::constant(Mat(1, 1, 0.0));
        Mat cands(noun_order.size(), sys.cfg.text_dim);
        for (std::size_t i = 0; i < noun_order.size(); ++i) {
            const auto e = sys.embedder.embed(noun_order[i]);
            std::copy(e.vector.begin(), e.vector.end(), cands.row(i));
        }
        const Var all = pooled.size() == 1 ? pooled[0]
                                           : core::concat_rows(pooled);
        return objectives::semantic_loss(Var::constant(std::move(cands)), all,
                                         match, tau);
    }
};

// Shared between the training loop and stage1_batch_loss so a direct
// forward evaluation reproduces the step-0 training loss exactly.
Var build_stage1_loss(System& sys, const PretrainData& data, std::size_t step,
                      objectives::LossReport* report) {
    const PhaseConfig& ph = sys.cfg.pretrain;
    RngState batch_rng(RngState::mix(sys.cfg.seed, 0xB000 + step));
    SemBatchAccum sem;
    std::vector<Var> entropy_masks;
    Var recons_acc;

    for (std::size_t b = 0; b < ph.batch_size; ++b) {
        const PretrainSampleCache& s =
            data.train[batch_rng.uniform_int(data.train.size())];
        RngState noise = batch_rng.fork(0x51A7 + b);
        const Var feats = Var::constant(s.features);

        const slotcore::SlotInit init = sys.slots->init_slots(s.bundle, noise);
        const slotcore::SlotSet set = sys.slots->attend(feats, init);
        const slotcore::Reconstruction rec = sys.slots->decode(set.slots);

        Var r = objectives::recons_loss(feats, rec.features_hat);
        recons_acc = recons_acc.defined() ? core::add(recons_acc, r) : r;
        entropy_masks.push_back(set.attn_masks);

        std::size_t n_cond = 0;
        for (bool f : init.conditioned) n_cond += f;
        if (n_cond > 0) {
            // Conditioned-only pooling uses each noun slot's own mask row;
            // the alternative drops spatial selection and pools the whole
            // grid for every noun (global image-text contrast).
            Var masks =
                sys.cfg.pool_conditioned_only
                    ? core::slice_rows(set.attn_masks, 0, n_cond)
                    : Var::constant(Mat(n_cond, s.features.rows, 1.0));
            const Var dense = sys.semproj->project(feats);
            sem.add(sys, s.bundle, n_cond, masks, dense);
        }
    }

    Var recons = core::mul_scalar(recons_acc, 1.0 / double(ph.batch_size));
    Var sem_loss = sem.loss(sys, sys.cfg.tau);
    Var pen = objectives::entropy_penalty(entropy_masks, sys.cfg.slot.epsilon);
    Var zero = Var::constant(Mat(1, 1, 0.0));
    return objectives::overall_loss(recons, sem_loss, pen, zero, ph.weights,
                                    report);
}

}  // namespace

objectives::LossReport stage1_batch_loss(System& sys, const PretrainData& data,
                                         std::size_t step) {
    objectives::LossReport report;
    core::NoGradGuard ng;
    (void)build_stage1_loss(sys, data, step, &report);
    return report;
}

DiscoveryEval evaluate_discovery(const System& sys,
                                 const std::vector<PretrainSampleCache>& data,
                                 const std::string& mask_source) {
    core::NoGradGuard ng;
    DiscoveryEval out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const PretrainSampleCache& s = data[i];
        RngState noise(RngState::mix(sys.cfg.seed, 0xE7A1 + i));
        const slotcore::SlotInit init = sys.slots->init_slots(s.bundle, noise);
        const slotcore::SlotSet set =
            sys.slots->attend(Var::constant(s.features), init);

        Mat masks;
        if (mask_source == "alpha")
            masks = sys.slots->decode(set.slots).alpha_masks.val();
        else if (mask_source == "attn")
            masks = set.attn_masks.val();
        else
            throw std::invalid_argument("evaluate_discovery: mask source " +
                                        mask_source);

        const Mat up = slotcore::masks_to_grid(masks, s.grid_h, s.grid_w,
                                               s.gt.height, s.gt.width);
        const metrics::MaskStack hard = metrics::hard_masks_from_slots(up);
        const metrics::Segmentation pred =
            metrics::segmentation_from_hard_masks(hard, s.gt.height,
                                                  s.gt.width);

        auto [gt_masks, gt_labels] = metrics::masks_from_segmentation(s.gt);
        std::vector<int> class_ids;
        for (int l : gt_labels) class_ids.push_back(s.gt_class_ids[l - 1]);

        const double ari = metrics::fg_ari(pred, s.gt);
        const double mi = metrics::mbo(hard, gt_masks);
        const double mc = metrics::mbo(hard, gt_masks, class_ids);
        out.report.add(ari, mi, mc);

        // noun-designated slots vs the objects they name
        auto label_of_noun = [&](const std::string& noun) -> int {
            if (noun == "goal") return s.goal_label;
            for (std::size_t j = 0; j < s.object_nouns.size(); ++j)
                if (s.object_nouns[j] == noun) return s.object_labels[j];
            return 0;
        };
        auto mask_of_label = [&](int label) -> const std::vector<std::uint8_t>* {
            for (std::size_t g = 0; g < gt_labels.size(); ++g)
                if (gt_labels[g] == label) return &gt_masks[g];
            return nullptr;
        };
        std::size_t n_cond = 0;
        for (bool f : init.conditioned) n_cond += f;
        for (std::size_t c = 0; c < n_cond; ++c) {
            const int label = label_of_noun(s.bundle.nouns[c]);
            if (label == 0) continue;
            const auto* gt_mask = mask_of_label(label);
            if (!gt_mask) continue;
            out.conditioned_iou += metrics::iou(hard[c], *gt_mask);
            double unc = 0.0;
            std::size_t n_unc = 0;
            for (std::size_t k = 0; k < hard.size(); ++k) {
                if (init.conditioned[k]) continue;
                unc += metrics::iou(hard[k], *gt_mask);
                ++n_unc;
            }
            if (n_unc > 0) out.unconditioned_iou += unc / double(n_unc);
            ++out.pairs_scored;
        }
    }
    out.report.finalize();
    if (out.pairs_scored > 0) {
        out.conditioned_iou /= double(out.pairs_scored);
        out.unconditioned_iou /= double(out.pairs_scored);
    }
    return out;
}

Stage1Result pretrain_stage1(System& sys, const PretrainData& data,
                             const std::string& log_path,
                             const std::string& snapshot_path) {
    if (data.train.empty())
        throw std::invalid_argument("pretrain_stage1: empty training split");
    const PhaseConfig& ph = sys.cfg.pretrain;

    core::AdamW::Options opt_cfg;
    core::AdamW opt(
        [&] {
            auto g = named_group(sys.store, "slotcore/");
            for (auto& p : named_group(sys.store, "objectives/"))
                g.push_back(p);
            return g;
        }(),
        opt_cfg);

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log)
            throw std::runtime_error("pretrain_stage1: cannot open log " +
                                     log_path);
    }

    Stage1Result result;
    const std::uint64_t backbone0 = sys.backbone_hash();
    core::Archive snapshot;
    std::size_t snapshot_step = 0;
    auto take_snapshot = [&](std::size_t step) {
        snapshot = core::Archive{};
        for (const auto& [name, var] : sys.store.all())
            snapshot.tensors[name] = var.val();
        snapshot.meta_u64["step"] = step;
        snapshot_step = step;
    };
    take_snapshot(0);

    for (std::size_t step = 0; step < ph.steps; ++step) {
        objectives::LossReport report;
        Var total;
        try {
            total = build_stage1_loss(sys, data, step, &report);
        } catch (const std::runtime_error&) {
            if (!snapshot_path.empty()) snapshot.save(snapshot_path);
            throw std::runtime_error(
                "pretrain_stage1: loss diverged at step " +
                std::to_string(step) + "; last good snapshot from step " +
                std::to_string(snapshot_step) +
                (snapshot_path.empty() ? "" : " written to " + snapshot_path));
        }
        core::backward(total);
        opt.step(lr_at(step, ph));

        if (step == 0) result.first_report = report;
        result.last_report = report;
        ++result.steps_run;

        if (log.is_open()) {
            log << "{\"step\":" << step << ",\"lr\":" << lr_at(step, ph)
                << ",\"report\":" << report.to_json() << "}\n";
        }
        if (ph.snapshot_every && (step + 1) % ph.snapshot_every == 0)
            take_snapshot(step + 1);
        if (ph.eval_every && (step + 1) % ph.eval_every == 0 &&
            !data.eval.empty()) {
            const DiscoveryEval ev = evaluate_discovery(
                sys, data.eval, sys.cfg.metric_mask_source);
            result.final_eval_fg_ari = ev.report.mean_fg_ari;
            if (log.is_open())
                log << "{\"step\":" << step + 1
                    << ",\"eval_fg_ari\":" << ev.report.mean_fg_ari
                    << ",\"eval_mbo_i\":" << ev.report.mean_mbo_i
                    << ",\"cond_iou\":" << ev.conditioned_iou
                    << ",\"uncond_iou\":" << ev.unconditioned_iou << "}\n";
        }
    }

    if (sys.backbone_hash() != backbone0)
        throw std::logic_error("pretrain_stage1: frozen backbone changed");

    result.extra.step = result.steps_run;
    result.extra.optimizer_state = opt.state_tensors();
    result.extra.optimizer_steps = opt.steps_taken();
    return result;
}

}  // namespace storm::trainer
