// Acceptance suite: one pass/fail line per criterion. Criteria 1-4, 8 and 9
// are oracle/invariant checks that finish in seconds; 5-7 train the system
// at desk scale and verify the learning signal and qualitative trends.
//
// Usage: storm_acceptance [criterion ids...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "storm/cli/cli.hpp"
#include "storm/trainer/trainer.hpp"
#include "storm/simd/kernels.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace storm;
using core::Mat;
using core::RngState;
using core::Var;
using trainer::Config;
using trainer::System;

#ifndef STORM_CLI_PATH
#define STORM_CLI_PATH "storm"
#endif

namespace {

// The tuned desk-scale configuration every heavy criterion runs with. The
// thresholds themselves come from the acceptance contract and are asserted
// inline below.
const char* kAcceptanceConfig = R"json({
  "seed": 1,
  "backend": {"kind": "synthetic", "seed": 0, "patch": 8, "dim": 32},
  "slot": {"n_slots": 7, "slot_dim": 24, "n_iters": 3, "n_conditioned": 4,
           "decoder_hidden": 48, "decoder_layers": 3},
  "policy": {"mask_mode": "center", "model_dim": 96, "n_layers": 2,
             "n_heads": 4, "history": 4, "chunk": 10, "n_components": 3},
  "metric_mask_source": "alpha",
  "mask_source": "attn",
  "pretrain_images": 2000,
  "eval_fraction": 0.1,
  "pretrain": {"steps": 4000, "batch_size": 16, "base_lr": 4e-4,
               "warmup_steps": 400, "eval_every": 0},
  "joint": {"steps": 3000, "batch_size": 16, "base_lr": 3e-4,
            "warmup_steps": 150, "slot_lr": 1e-5, "variant": "storm"},
  "env": {"task": "push", "difficulty": 1, "horizon": 100,
          "nd_distractors": 2, "demo_count": 200},
  "eval": {"episodes": 40}
})json";

struct Criterion {
    int id;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

fs::path workdir() {
    const fs::path p = fs::temp_directory_path() / "storm_acceptance";
    fs::create_directories(p);
    return p;
}

Config acceptance_config(std::uint64_t seed) {
    Config cfg = Config::from_json_text(kAcceptanceConfig, "<acceptance>");
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << std::fixed << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// criterion 1: loss oracles

bool criterion_loss_oracles(std::string& detail) {
    RngState rng(101);
    double worst = 0.0;
    const double tol = 1e-8;

    for (int trial = 0; trial < 20; ++trial) {
        // Eq. 1: mean squared feature reconstruction error
        const std::size_t n = 2 + rng.uniform_int(6);
        const std::size_t d = 1 + rng.uniform_int(5);
        const Mat f = Mat::gaussian(n, d, rng);
        const Mat fh = Mat::gaussian(n, d, rng);
        worst = std::max(worst, std::fabs(
            objectives::recons_loss(Var::constant(f), Var::constant(fh))
                .scalar() - oracles::mse_loop(f, fh)));

        // Eq. 2: contrastive alignment over candidate texts
        const std::size_t m = 1 + rng.uniform_int(3);
        const std::size_t t = m + rng.uniform_int(3);
        const double tau = 0.05 + rng.uniform() * 0.5;
        Mat cands = Mat::gaussian(t, 4, rng);
        Mat pooled = Mat::gaussian(m, 4, rng);
        std::vector<std::size_t> match;
        for (std::size_t i = 0; i < m; ++i) match.push_back(i);
        double expect = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> logits(t);
            for (std::size_t c = 0; c < t; ++c) {
                double dot = 0.0;
                for (std::size_t j = 0; j < 4; ++j)
                    dot += cands.at(c, j) * pooled.at(i, j);
                logits[c] = dot / tau;
            }
            expect += oracles::info_nce_row(logits, i);
        }
        expect /= double(m);
        worst = std::max(worst, std::fabs(
            objectives::semantic_loss(Var::constant(cands),
                                      Var::constant(pooled), match, tau)
                .scalar() - expect));

        // Eq. 3: entropy penalty against the direct formula
        const std::size_t k = 2 + rng.uniform_int(6);
        Mat masks = Mat::gaussian(k, 8, rng);
        for (double& x : masks.v) x = std::fabs(x);
        std::vector<double> mass(k, 0.0);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < 8; ++j) mass[i] += masks.at(i, j);
        worst = std::max(worst, std::fabs(
            objectives::entropy_penalty({Var::constant(masks)}, 1e-8)
                .scalar() - oracles::entropy_penalty_formula(mass, 1e-8)));

        // Eq. 4: weighted combination
        const double r = rng.uniform(), s = rng.uniform(), p = rng.uniform(),
                     tq = rng.uniform();
        objectives::LossWeights w{rng.uniform(), rng.uniform(), rng.uniform(),
                                  rng.uniform()};
        auto c1 = [&](double v) { return Var::constant(Mat(1, 1, v)); };
        const double total =
            objectives::overall_loss(c1(r), c1(s), c1(p), c1(tq), w).scalar();
        const double direct =
            ((w.recons * r + w.sem * s) + w.pen * p) + w.temporal * tq;
        worst = std::max(worst, std::fabs(total - direct));

        // temporal slot-slot InfoNCE
        const std::size_t ks = 2 + rng.uniform_int(4);
        const double tt = 0.2 + rng.uniform() * 0.6;
        Mat a = Mat::gaussian(ks, 5, rng);
        Mat b = Mat::gaussian(ks, 5, rng);
        auto unit = [&](const Mat& x, std::size_t row, std::vector<double>& out) {
            double nrm = 1e-12;
            for (std::size_t j = 0; j < x.cols; ++j)
                nrm += x.at(row, j) * x.at(row, j);
            nrm = std::sqrt(nrm);
            out.resize(x.cols);
            for (std::size_t j = 0; j < x.cols; ++j)
                out[j] = x.at(row, j) / nrm;
        };
        std::vector<std::vector<double>> au(ks), bu(ks);
        for (std::size_t i = 0; i < ks; ++i) {
            unit(a, i, au[i]);
            unit(b, i, bu[i]);
        }
        double fwd = 0.0, bwd = 0.0;
        for (std::size_t i = 0; i < ks; ++i) {
            std::vector<double> row(ks), col(ks);
            for (std::size_t j = 0; j < ks; ++j) {
                double df = 0.0, db = 0.0;
                for (std::size_t q = 0; q < 5; ++q) {
                    df += au[i][q] * bu[j][q];
                    db += au[j][q] * bu[i][q];
                }
                row[j] = df / tt;
                col[j] = db / tt;
            }
            fwd += oracles::info_nce_row(row, i);
            bwd += oracles::info_nce_row(col, i);
        }
        const double expect_t = 0.5 * (fwd + bwd) / double(ks);
        worst = std::max(worst, std::fabs(
            objectives::temporal_slot_loss(Var::constant(a), Var::constant(b),
                                           tt).scalar() - expect_t));
    }

    // penalty range over 1000 random tensors; exact endpoints
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t k = 1 + rng.uniform_int(8);
        Mat m = Mat::gaussian(k, 1 + rng.uniform_int(12), rng);
        for (double& x : m.v) x = std::fabs(x);
        const double p =
            objectives::entropy_penalty({Var::constant(m)}, 1e-8).scalar();
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    const bool range_ok = lo >= 0.0 && hi <= 1.0;

    Mat uni(5, 10, 0.2);
    const double pen_uniform =
        objectives::entropy_penalty({Var::constant(uni)}, 1e-8).scalar();
    Mat hot(5, 10);
    for (int j = 0; j < 10; ++j) hot.at(2, j) = 1.0;
    const double pen_hot =
        objectives::entropy_penalty({Var::constant(hot)}, 1e-8).scalar();

    detail = "max oracle gap " + fmt(worst, 12) + ", penalty range [" +
             fmt(lo, 6) + "," + fmt(hi, 6) + "], pen(uniform)=" +
             fmt(pen_uniform, 9) + ", pen(one-hot)=" + fmt(pen_hot, 9);
    return worst <= tol && range_ok && std::fabs(pen_uniform) <= 1e-6 &&
           std::fabs(pen_hot - 1.0) <= 1e-6;
}

// ---------------------------------------------------------------------------
// criterion 2: gradient checks

bool criterion_gradient_checks(std::string& detail) {
    RngState rng(202);
    double worst = 0.0;
    const double tol = 1e-4;
    using storm::testutil::grad_check;

    for (int i = 0; i < 10; ++i) {
        worst = std::max(worst, grad_check(
            [](const std::vector<Var>& in) {
                return objectives::recons_loss(in[0], in[1]);
            },
            {Mat::gaussian(3, 4, rng), Mat::gaussian(3, 4, rng)}));

        Mat masks = Mat::gaussian(2, 6, rng);
        for (double& x : masks.v) x = std::fabs(x) + 0.01;
        worst = std::max(worst, grad_check(
            [](const std::vector<Var>& in) {
                return objectives::semantic_loss(
                    in[2], objectives::mask_pool(in[0], in[1]), {0, 1}, 0.2);
            },
            {masks, Mat::gaussian(6, 5, rng), Mat::gaussian(4, 5, rng)}));

        Mat m1 = Mat::gaussian(4, 7, rng), m2 = Mat::gaussian(4, 7, rng);
        for (double& x : m1.v) x = std::fabs(x) + 0.05;
        for (double& x : m2.v) x = std::fabs(x) + 0.05;
        worst = std::max(worst, grad_check(
            [](const std::vector<Var>& in) {
                return objectives::entropy_penalty({in[0], in[1]});
            },
            {m1, m2}));

        worst = std::max(worst, grad_check(
            [](const std::vector<Var>& in) {
                return objectives::temporal_slot_loss(in[0], in[1], 0.5);
            },
            {Mat::gaussian(3, 5, rng), Mat::gaussian(3, 5, rng)}));

        const Mat target = Mat::gaussian(1, 6, rng, 0.5);
        worst = std::max(worst, grad_check(
            [&](const std::vector<Var>& in) {
                policy::GmmOut o{in[0], in[1], in[2]};
                return policy::gmm_nll(o, target);
            },
            {Mat::gaussian(1, 3, rng, 0.5), Mat::gaussian(3, 6, rng, 0.5),
             Mat::gaussian(3, 6, rng, 0.3)}));
    }
    detail = "worst relative error " + fmt(worst, 8);
    return worst <= tol;
}

// ---------------------------------------------------------------------------
// criterion 3: slot attention invariants

bool criterion_slot_invariants(std::string& detail) {
    RngState rng(303);
    double worst_simplex = 0.0, worst_equiv = 0.0;

    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + rng.uniform_int(6);
        const std::size_t ds = 8 + rng.uniform_int(3) * 4;
        const std::size_t df = 6 + rng.uniform_int(3) * 2;
        const std::size_t n = 6 + rng.uniform_int(8);
        slotcore::SlotAttentionConfig cfg;
        cfg.n_slots = k;
        cfg.slot_dim = ds;
        cfg.feature_dim = df;
        cfg.text_dim = 4;
        cfg.n_patches = n;
        cfg.n_conditioned = 1;
        cfg.decoder_hidden = 16;
        cfg.decoder_layers = 2;
        core::ParamStore store;
        RngState prng(rng.next_u64());
        slotcore::SlotCore model(cfg, store, prng);

        const Mat feats = Mat::gaussian(n, df, rng);
        const Mat init = Mat::gaussian(k, ds, rng);
        slotcore::SlotInit si{Var::constant(init),
                              std::vector<bool>(k, false), 0};
        const slotcore::SlotSet set =
            model.attend(Var::constant(feats), si);
        const slotcore::Reconstruction rec = model.decode(set.slots);

        for (std::size_t j = 0; j < n; ++j) {
            double sa = 0.0, sd = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                sa += set.attn_masks.val().at(i, j);
                sd += rec.alpha_masks.val().at(i, j);
            }
            worst_simplex = std::max({worst_simplex, std::fabs(sa - 1.0),
                                      std::fabs(sd - 1.0)});
        }

        // permutation equivariance: reversal permutation
        Mat init_p(k, ds);
        for (std::size_t i = 0; i < k; ++i)
            std::copy(init.row(k - 1 - i), init.row(k - 1 - i) + ds,
                      init_p.row(i));
        slotcore::SlotInit sp{Var::constant(init_p),
                              std::vector<bool>(k, false), 0};
        const slotcore::SlotSet set_p =
            model.attend(Var::constant(feats), sp);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < ds; ++j)
                worst_equiv = std::max(
                    worst_equiv,
                    std::fabs(set_p.slots.val().at(i, j) -
                              set.slots.val().at(k - 1 - i, j)));
            for (std::size_t j = 0; j < n; ++j)
                worst_equiv = std::max(
                    worst_equiv,
                    std::fabs(set_p.attn_masks.val().at(i, j) -
                              set.attn_masks.val().at(k - 1 - i, j)));
        }
    }

    // K = 1: exactly all-ones masks
    slotcore::SlotAttentionConfig cfg;
    cfg.n_slots = 1;
    cfg.n_conditioned = 1;
    cfg.slot_dim = 8;
    cfg.feature_dim = 6;
    cfg.text_dim = 4;
    cfg.n_patches = 5;
    cfg.decoder_hidden = 8;
    cfg.decoder_layers = 2;
    core::ParamStore store;
    RngState prng(11);
    slotcore::SlotCore model(cfg, store, prng);
    RngState nrng(13);
    const slotcore::SlotInit init = model.init_slots({}, nrng);
    const slotcore::SlotSet set =
        model.attend(Var::constant(Mat::gaussian(5, 6, prng)), init);
    bool ones_exact = true;
    for (double v : set.attn_masks.val().v) ones_exact &= v == 1.0;

    detail = "simplex gap " + fmt(worst_simplex, 9) + ", equivariance gap " +
             fmt(worst_equiv, 9) + ", K=1 exact " +
             (ones_exact ? "yes" : "no");
    return worst_simplex <= 1e-6 && worst_equiv <= 1e-5 && ones_exact;
}

// ---------------------------------------------------------------------------
// criterion 4: metric oracles

bool criterion_metric_oracles(std::string& detail) {
    RngState rng(404);
    double worst = 0.0;
    bool perm_exact = true;

    for (int trial = 0; trial < 50; ++trial) {
        metrics::Segmentation gt(8, 8, 0);
        for (auto& l : gt.labels) l = int(rng.uniform_int(4));  // 0 ignored
        bool has_fg = false;
        for (int l : gt.labels) has_fg |= l != 0;
        if (!has_fg) gt.labels[rng.uniform_int(64)] = 1;
        metrics::Segmentation pred(8, 8, 0);
        for (auto& l : pred.labels) l = 1 + int(rng.uniform_int(4));

        worst = std::max(worst, std::fabs(
            metrics::fg_ari(pred, gt) -
            oracles::fg_ari_pair_counting(pred, gt)));

        metrics::MaskStack pm(3, std::vector<std::uint8_t>(64)),
            gm(2, std::vector<std::uint8_t>(64));
        for (auto& m : pm)
            for (auto& b : m) b = rng.uniform() < 0.4;
        for (auto& m : gm)
            for (auto& b : m) b = rng.uniform() < 0.4;
        worst = std::max(worst, std::fabs(metrics::mbo(pm, gm) -
                                          oracles::mbo_exhaustive(pm, gm)));

        // exact invariance to label bijections on both sides
        metrics::Segmentation pred2 = pred, gt2 = gt;
        std::map<int, int> pperm, gperm;
        int next = 50;
        for (int& l : pred2.labels) {
            auto [it, fresh] = pperm.emplace(l, next);
            if (fresh) next += 1 + int(rng.uniform_int(4));
            l = it->second;
        }
        for (int& l : gt2.labels) {
            if (l == gt2.ignore_label) continue;
            auto [it, fresh] = gperm.emplace(l, next);
            if (fresh) next += 1 + int(rng.uniform_int(4));
            l = it->second;
        }
        perm_exact &=
            metrics::fg_ari(pred, gt) == metrics::fg_ari(pred2, gt) &&
            metrics::fg_ari(pred, gt) == metrics::fg_ari(pred2, gt2);
    }
    detail = "max oracle gap " + fmt(worst, 12) + ", permutation invariance " +
             (perm_exact ? "exact" : "broken");
    return worst <= 1e-9 && perm_exact;
}

// ---------------------------------------------------------------------------
// criteria 5-7 share pretrained checkpoints per seed

fs::path ensure_pretrained(std::uint64_t seed, std::string& info) {
    const fs::path path =
        workdir() / ("pretrain_seed" + std::to_string(seed) + ".ckpt");
    if (fs::exists(path)) {
        info += "seed " + std::to_string(seed) + ": cached; ";
        return path;
    }
    Config cfg = acceptance_config(seed);
    System sys = System::build(cfg, false);
    const auto samples =
        spriteworld::build_pretrain_set(cfg.pretrain_images, seed);
    const trainer::PretrainData data =
        trainer::prepare_pretrain_data(sys, samples, cfg.eval_fraction);
    const trainer::Stage1Result res = trainer::pretrain_stage1(sys, data);
    trainer::save_checkpoint(sys, path.string(), res.extra);
    info += "seed " + std::to_string(seed) + ": trained " +
            std::to_string(res.steps_run) + " steps; ";
    return path;
}

bool criterion_stage1_learning(std::string& detail) {
    bool ok = true;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Config cfg = acceptance_config(seed);
        System sys = System::build(cfg, false);
        const auto samples =
            spriteworld::build_pretrain_set(cfg.pretrain_images, seed);
        const trainer::PretrainData data =
            trainer::prepare_pretrain_data(sys, samples, cfg.eval_fraction);

        const trainer::DiscoveryEval before = trainer::evaluate_discovery(
            sys, data.eval, cfg.metric_mask_source);
        const trainer::Stage1Result res = trainer::pretrain_stage1(sys, data);
        const trainer::DiscoveryEval after = trainer::evaluate_discovery(
            sys, data.eval, cfg.metric_mask_source);

        const fs::path ckpt =
            workdir() / ("pretrain_seed" + std::to_string(seed) + ".ckpt");
        trainer::save_checkpoint(sys, ckpt.string(), res.extra);

        const double gain = after.report.mean_fg_ari - before.report.mean_fg_ari;
        const bool seed_ok = gain >= 0.30 &&
                             after.conditioned_iou > after.unconditioned_iou;
        ok &= seed_ok;
        detail += "seed " + std::to_string(seed) + ": FG-ARI " +
                  fmt(before.report.mean_fg_ari, 3) + "->" +
                  fmt(after.report.mean_fg_ari, 3) + " (gain " + fmt(gain, 3) +
                  "), cond IoU " + fmt(after.conditioned_iou, 3) +
                  (after.conditioned_iou > after.unconditioned_iou ? " > "
                                                                   : " <= ") +
                  fmt(after.unconditioned_iou, 3) + " uncond" +
                  (seed_ok ? "" : " [FAIL]") + "; ";
    }
    return ok;
}

bool criterion_multiphase_trend(std::string& detail) {
    std::map<std::string, double> nd_mean, id_mean;
    std::string info;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const fs::path ckpt = ensure_pretrained(seed, info);
        const auto demos = spriteworld::collect_demos(
            "push", 1, 200, RngState::mix(seed, 0xDE305), 100);
        for (const std::string variant : {"scratch", "frozen", "storm"}) {
            Config cfg = acceptance_config(seed);
            cfg.joint.variant = variant;
            System sys = System::build(cfg, true);
            if (variant != "scratch")
                trainer::load_checkpoint(sys, ckpt.string(), false);
            const trainer::DemoData data =
                trainer::prepare_demo_data(sys, demos);
            trainer::train_stage2(sys, data);
            const double nd =
                trainer::evaluate_policy(sys, cfg.env, cfg.eval.episodes,
                                         seed + 2000, "ND")
                    .success_rate;
            const double id =
                trainer::evaluate_policy(sys, cfg.env, cfg.eval.episodes,
                                         seed + 1000, "ID")
                    .success_rate;
            nd_mean[variant] += nd / 3.0;
            id_mean[variant] += id / 3.0;
        }
    }
    const bool order_ok = nd_mean["storm"] >= nd_mean["frozen"] &&
                          nd_mean["frozen"] >= nd_mean["scratch"];
    const double gap = nd_mean["storm"] - nd_mean["scratch"];
    detail = "ND means: storm " + fmt(nd_mean["storm"], 3) + " >= frozen " +
             fmt(nd_mean["frozen"], 3) + " >= scratch " +
             fmt(nd_mean["scratch"], 3) + "? " + (order_ok ? "yes" : "no") +
             "; storm-scratch gap " + fmt(gap, 3) + " (need >= 0.05); ID " +
             "storm " + fmt(id_mean["storm"], 3) + ", frozen " +
             fmt(id_mean["frozen"], 3) + ", scratch " +
             fmt(id_mean["scratch"], 3);
    return order_ok && gap >= 0.05;
}

bool criterion_mask_repr_ablation(std::string& detail) {
    std::string info;
    const fs::path ckpt = ensure_pretrained(1, info);
    const fs::path dir = workdir() / "ablate_mask_repr";
    fs::remove_all(dir);

    const fs::path cfg_path = workdir() / "acceptance_config.json";
    {
        std::ofstream os(cfg_path, std::ios::trunc);
        os << kAcceptanceConfig;
    }
    const fs::path demo_dir = workdir() / "ablate_demos";
    if (!fs::exists(demo_dir / "demos.bin")) {
        const auto demos = spriteworld::collect_demos(
            "push", 1, 200, RngState::mix(1, 0xDE305), 100);
        fs::create_directories(demo_dir);
        spriteworld::save_demos(demos, (demo_dir / "demos.bin").string());
    }

    // the criterion exercises the CLI command itself
    const std::string cmd = std::string(STORM_CLI_PATH) +
                            " ablate --axis mask-repr --config " +
                            cfg_path.string() + " --demos " +
                            (demo_dir / "demos.bin").string() +
                            " --pretrain-ckpt " + ckpt.string() +
                            " --seeds 1 2 3 --out " + dir.string() +
                            " > " + (dir.string() + ".log") + " 2>&1";
    fs::create_directories(dir);
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
        detail = "ablate command failed with exit code " + std::to_string(rc);
        return false;
    }

    std::ifstream csv(dir / "results.csv");
    if (!csv) {
        detail = "results.csv missing";
        return false;
    }
    std::map<std::string, std::pair<double, int>> id_stats;
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string axis, row, seed, id, nd;
        std::getline(ss, axis, ',');
        std::getline(ss, row, ',');
        std::getline(ss, seed, ',');
        std::getline(ss, id, ',');
        std::getline(ss, nd, ',');
        id_stats[row].first += std::stod(id);
        id_stats[row].second += 1;
    }
    const std::vector<std::string> rows{"none", "center", "bbox", "mask"};
    for (const auto& r : rows)
        if (!id_stats.count(r) || id_stats[r].second != 3) {
            detail = "row " + r + " missing or wrong seed count";
            return false;
        }
    std::map<std::string, double> id_mean;
    for (const auto& r : rows)
        id_mean[r] = id_stats[r].first / id_stats[r].second;
    const double best_aware =
        std::max({id_mean["center"], id_mean["bbox"], id_mean["mask"]});
    detail = "ID means: none " + fmt(id_mean["none"], 3) + ", center " +
             fmt(id_mean["center"], 3) + ", bbox " + fmt(id_mean["bbox"], 3) +
             ", mask " + fmt(id_mean["mask"], 3) + "; none < best " +
             (id_mean["none"] < best_aware ? "yes" : "no");
    return id_mean["none"] < best_aware;
}

// ---------------------------------------------------------------------------
// criterion 8: detachment contract

bool criterion_detachment(std::string& detail) {
    Config cfg = acceptance_config(7);
    cfg.joint.steps = 30;
    cfg.joint.warmup_steps = 5;
    cfg.env.demo_count = 12;
    System sys = System::build(cfg, true);
    const auto demos = spriteworld::collect_demos(
        cfg.env.task, cfg.env.difficulty, cfg.env.demo_count,
        RngState::mix(cfg.seed, 0xDE305), cfg.env.horizon);
    const trainer::DemoData data = trainer::prepare_demo_data(sys, demos);

    const double slot_grad =
        trainer::policy_grad_magnitude(sys, data, "slotcore/");
    const double obj_grad =
        trainer::policy_grad_magnitude(sys, data, "objectives/");
    const double pol_grad =
        trainer::policy_grad_magnitude(sys, data, "policy/");

    const std::uint64_t backbone0 = sys.backbone_hash();
    trainer::train_stage2(sys, data);
    const bool hash_ok = sys.backbone_hash() == backbone0;

    detail = "policy-loss grad into slotcore " + fmt(slot_grad, 1) +
             ", into objectives " + fmt(obj_grad, 1) +
             " (policy side " + fmt(pol_grad, 3) +
             " > 0); backbone hash invariant " + (hash_ok ? "yes" : "no");
    return slot_grad == 0.0 && obj_grad == 0.0 && pol_grad > 0.0 && hash_ok;
}

// ---------------------------------------------------------------------------
// criterion 9: schedule fidelity

bool criterion_schedule(std::string& detail) {
    const Config paper = Config::paper_preset();
    const double at_warmup = trainer::lr_at(10000, paper.pretrain);
    const double at_end = trainer::lr_at(paper.pretrain.steps, paper.pretrain);
    detail = "lr(10000) = " + fmt(at_warmup, 10) + " (need 4e-4 exactly), " +
             "lr(" + std::to_string(paper.pretrain.steps) + ") = " +
             fmt(at_end, 12) + " (need <= 1e-9)";
    return at_warmup == 4e-4 && at_end <= 1e-9;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    auto selected = [&](int id) {
        if (wanted.empty()) return true;
        for (int w : wanted)
            if (w == id) return true;
        return false;
    };

    std::vector<Criterion> results;
    auto run = [&](int id, const std::string& name, auto&& fn) {
        if (!selected(id)) return;
        Criterion c;
        c.id = id;
        c.name = name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.pass = fn(c.detail);
        } catch (const std::exception& e) {
            c.pass = false;
            c.detail += std::string(" exception: ") + e.what();
        }
        c.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        std::cout << (c.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id
                  << " (" << c.name << "): " << c.detail << " ["
                  << fmt(c.seconds, 1) << "s]\n"
                  << std::flush;
        results.push_back(c);
    };

    std::cout << "acceptance suite, simd backend: " << storm::simd::backend_name()
              << "\n";
    run(1, "loss oracles", criterion_loss_oracles);
    run(2, "gradient checks", criterion_gradient_checks);
    run(3, "slot attention invariants", criterion_slot_invariants);
    run(4, "metric oracles", criterion_metric_oracles);
    run(5, "stage-1 learning signal", criterion_stage1_learning);
    run(6, "multi-phase trend", criterion_multiphase_trend);
    run(7, "mask-representation ablation", criterion_mask_repr_ablation);
    run(8, "detachment contract", criterion_detachment);
    run(9, "schedule fidelity", criterion_schedule);

    std::size_t passed = 0;
    for (const Criterion& c : results) passed += c.pass;
    std::cout << passed << "/" << results.size() << " criteria passed\n";
    return passed == results.size() ? 0 : 1;
}
