#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "storm/cli/cli.hpp"
#include "storm/trainer/trainer.hpp"

namespace storm::cli {

namespace fs = std::filesystem;
using core::RngState;
using nlohmann::json;
using trainer::Config;
using trainer::System;

namespace {

std::uint64_t file_hash(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("manifest: cannot hash " + p.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    return core::fnv1a(bytes.data(), bytes.size());
}

// Every command writes its resolved configuration and a manifest of the
// files it produced (name -> content hash). No timestamps: identical runs
// produce identical manifests.
struct RunDir {
    fs::path dir;
    std::vector<fs::path> produced;

    explicit RunDir(const std::string& out) : dir(out) {
        fs::create_directories(dir);
    }
    fs::path path(const std::string& name) {
        produced.push_back(dir / name);
        return dir / name;
    }
    void write_text(const std::string& name, const std::string& text) {
        std::ofstream os(path(name), std::ios::trunc);
        if (!os)
            throw std::runtime_error("cannot write " + (dir / name).string());
        os << text;
    }
    void finish(const json& meta) {
        json manifest;
        manifest["meta"] = meta;
        json files = json::object();
        std::sort(produced.begin(), produced.end());
        for (const fs::path& p : produced) {
            if (!fs::exists(p)) continue;
            files[p.filename().string()] =
                "fnv1a:" + std::to_string(file_hash(p));
        }
        manifest["files"] = files;
        std::ofstream os(dir / "manifest.json", std::ios::trunc);
        os << manifest.dump(2) << "\n";
    }
};

Config load_config(const std::string& config_path, std::uint64_t seed,
                   bool seed_set) {
    Config cfg;
    try {
        cfg = config_path.empty() ? Config::desk_preset()
                                  : Config::from_file(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.validate();
        }
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

json eval_json(const trainer::EvalResult& r) {
    json j;
    j["success_rate"] = r.success_rate;
    j["episodes"] = r.episodes;
    j["successes"] = r.successes;
    return j;
}

json discovery_json(const trainer::DiscoveryEval& ev) {
    json j = json::parse(ev.report.to_json());
    j["conditioned_iou"] = ev.conditioned_iou;
    j["unconditioned_iou"] = ev.unconditioned_iou;
    j["pairs_scored"] = ev.pairs_scored;
    return j;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& kind, const std::string& task, int n,
                 std::uint64_t seed, int difficulty, const std::string& out,
                 bool jsonl) {
    RunDir run(out);
    json meta{{"command", "gen-data"}, {"kind", kind},   {"n", n},
              {"seed", seed},          {"task", task},   {"difficulty", difficulty}};

    if (kind == "pretrain") {
        const auto set = spriteworld::build_pretrain_set(std::size_t(n), seed);
        spriteworld::save_pretrain_set(set, run.path("pretrain.bin").string());
        meta["content_hash"] = spriteworld::pretrain_set_hash(set);
    } else if (kind == "demos") {
        const auto demos = spriteworld::collect_demos(
            task, difficulty, std::size_t(n), RngState::mix(seed, 0xDE305));
        spriteworld::save_demos(demos, run.path("demos.bin").string());
        if (jsonl)
            spriteworld::export_demos_jsonl(
                demos, run.path("demos.jsonl").string());
        std::size_t wins = 0;
        for (const auto& t : demos) wins += t.success;
        meta["content_hash"] = spriteworld::demos_hash(demos);
        meta["expert_success"] = double(wins) / double(demos.size());
    } else {
        throw ConfigError("gen-data: kind must be pretrain|demos");
    }

    std::set<std::string> lex = spriteworld::default_lexicon();
    features::save_lexicon(lex, run.path("lexicon.txt").string());
    json palettes;
    for (const auto& c : spriteworld::training_palette())
        palettes["train"].push_back(c.name);
    for (const auto& c : spriteworld::heldout_palette())
        palettes["heldout"].push_back(c.name);
    meta["palettes"] = palettes;
    meta["split"] = kind == "pretrain" ? "pretrain" : "ID";
    run.finish(meta);
    std::cout << "gen-data: wrote " << kind << " dataset (" << n
              << " items) to " << out << "\n";
    return 0;
}

int cmd_pretrain(const Config& cfg, const std::string& data_path,
                 const std::string& out) {
    RunDir run(out);
    run.write_text("resolved_config.json", cfg.to_json() + "\n");

    System sys = System::build(cfg, false);
    std::vector<spriteworld::PretrainSample> samples;
    if (data_path.empty())
        samples = spriteworld::build_pretrain_set(cfg.pretrain_images, cfg.seed);
    else
        samples = spriteworld::load_pretrain_set(data_path);
    const trainer::PretrainData data =
        trainer::prepare_pretrain_data(sys, samples, cfg.eval_fraction);

    const trainer::Stage1Result res = trainer::pretrain_stage1(
        sys, data, run.path("train_log.jsonl").string(),
        run.path("last_good.ckpt").string());
    trainer::save_checkpoint(sys, run.path("checkpoint.bin").string(),
                             res.extra);

    const trainer::DiscoveryEval ev =
        trainer::evaluate_discovery(sys, data.eval, cfg.metric_mask_source);
    run.write_text("report.json", discovery_json(ev).dump(2) + "\n");

    json meta{{"command", "pretrain"},
              {"steps", res.steps_run},
              {"final_total", res.last_report.total},
              {"eval_fg_ari", ev.report.mean_fg_ari}};
    run.finish(meta);
    std::cout << "pretrain: " << res.steps_run
              << " steps, eval FG-ARI " << ev.report.mean_fg_ari << "\n";
    return 0;
}

int cmd_train_policy(Config cfg, const std::string& demos_path,
                     const std::string& init_from, const std::string& out) {
    if (cfg.joint.variant != "scratch" && init_from.empty())
        throw ConfigError(
            "train-policy: variant " + cfg.joint.variant +
            " needs --init-from with a stage-1 checkpoint");
    RunDir run(out);
    run.write_text("resolved_config.json", cfg.to_json() + "\n");

    System sys = System::build(cfg, true);
    if (!init_from.empty()) trainer::load_checkpoint(sys, init_from, false);

    std::vector<spriteworld::Trajectory> demos;
    if (demos_path.empty())
        demos = spriteworld::collect_demos(cfg.env.task, cfg.env.difficulty,
                                           cfg.env.demo_count,
                                           RngState::mix(cfg.seed, 0xDE305),
                                           cfg.env.horizon);
    else
        demos = spriteworld::load_demos(demos_path);
    const trainer::DemoData data = trainer::prepare_demo_data(sys, demos);

    const trainer::Stage2Result res = trainer::train_stage2(
        sys, data, run.path("train_log.jsonl").string());
    trainer::save_checkpoint(sys, run.path("checkpoint.bin").string(),
                             res.extra);

    json meta{{"command", "train-policy"},
              {"variant", cfg.joint.variant},
              {"mask_repr", policy::to_string(cfg.policy.mask_mode)},
              {"steps", res.steps_run},
              {"final_policy_loss", res.last_policy_loss}};
    run.finish(meta);
    std::cout << "train-policy: " << res.steps_run << " steps, final loss "
              << res.last_policy_loss << "\n";
    return 0;
}

int cmd_eval_discovery(const Config& cfg, const std::string& ckpt,
                       const std::string& data_path, const std::string& out,
                       const std::string& mask_source, bool gt_as_pred) {
    RunDir run(out);
    run.write_text("resolved_config.json", cfg.to_json() + "\n");

    std::vector<spriteworld::PretrainSample> samples;
    if (data_path.empty())
        samples = spriteworld::build_pretrain_set(
            std::max<std::size_t>(64, cfg.pretrain_images / 10),
            RngState::mix(cfg.seed, 0xE7A1));
    else
        samples = spriteworld::load_pretrain_set(data_path);

    json report;
    if (gt_as_pred) {
        // self-evaluation: the ground truth scored as its own prediction
        metrics::MetricReport rep;
        for (const auto& s : samples) {
            const auto r = spriteworld::render_scene(s.spec);
            auto [gt_masks, labels] = metrics::masks_from_segmentation(
                r.gt_instances);
            std::vector<int> class_ids;
            for (int l : labels)
                class_ids.push_back(r.instance_class_ids[l - 1]);
            // class-level self-evaluation matches class unions against
            // class unions
            std::map<int, std::vector<std::uint8_t>> unions;
            for (std::size_t g = 0; g < gt_masks.size(); ++g) {
                auto& u = unions[class_ids[g]];
                if (u.empty()) u.assign(gt_masks[g].size(), 0);
                for (std::size_t i = 0; i < u.size(); ++i)
                    u[i] = u[i] || gt_masks[g][i];
            }
            metrics::MaskStack class_masks;
            for (auto& [cls, m] : unions) class_masks.push_back(std::move(m));
            rep.add(metrics::fg_ari(r.gt_instances, r.gt_instances),
                    metrics::mbo(gt_masks, gt_masks),
                    metrics::mbo(class_masks, gt_masks, class_ids));
        }
        rep.finalize();
        report = json::parse(rep.to_json());
    } else {
        if (ckpt.empty())
            throw ConfigError("eval-discovery: need --ckpt or --use-gt-as-pred");
        System sys = System::build(cfg, false);
        trainer::load_checkpoint(sys, ckpt, false);
        const trainer::PretrainData data =
            trainer::prepare_pretrain_data(sys, samples, 0.999);
        const trainer::DiscoveryEval ev = trainer::evaluate_discovery(
            sys, data.eval, mask_source.empty() ? cfg.metric_mask_source
                                                : mask_source);
        report = discovery_json(ev);
    }
    run.write_text("report.json", report.dump(2) + "\n");
    run.finish({{"command", "eval-discovery"}, {"gt_as_pred", gt_as_pred}});
    std::cout << "eval-discovery: mean FG-ARI "
              << report["mean"]["fg_ari"].get<double>() << ", mBO_i "
              << report["mean"]["mbo_i"].get<double>() << "\n";
    return 0;
}

int cmd_eval_policy(const Config& cfg, const std::string& ckpt,
                    const std::string& out, const std::string& mode,
                    std::size_t episodes, std::uint64_t seed) {
    RunDir run(out);
    run.write_text("resolved_config.json", cfg.to_json() + "\n");
    System sys = System::build(cfg, true);
    trainer::load_checkpoint(sys, ckpt, true);
    const trainer::EvalResult r = trainer::evaluate_policy(
        sys, cfg.env, episodes, seed, mode,
        run.path("rollouts.jsonl").string());
    run.write_text("result.json", eval_json(r).dump(2) + "\n");
    run.finish({{"command", "eval-policy"},
                {"mode", mode},
                {"success_rate", r.success_rate}});
    std::cout << "eval-policy[" << mode << "]: success rate "
              << r.success_rate << " over " << episodes << " episodes\n";
    return 0;
}

// One ablation row: train a stage-2 system for (row, seed) and score it.
struct AblationRow {
    std::string row;
    std::uint64_t seed;
    double id_success;
    double nd_success;
};

AblationRow run_ablation_row(const Config& base, const std::string& axis,
                             const std::string& row, std::uint64_t seed,
                             const std::vector<spriteworld::Trajectory>& demos,
                             const std::string& pretrain_ckpt,
                             std::size_t episodes) {
    Config cfg = base;
    cfg.seed = seed;
    if (axis == "mask-repr") {
        cfg.policy.mask_mode = policy::mask_repr_mode_from_string(row);
        cfg.joint.variant = "storm";
    } else {
        cfg.joint.variant = row;
    }
    cfg.validate();

    System sys = System::build(cfg, true);
    const bool needs_ckpt = cfg.joint.variant != "scratch";
    if (needs_ckpt) {
        if (pretrain_ckpt.empty())
            throw ConfigError("ablate: row " + row +
                              " needs --pretrain-ckpt");
        trainer::load_checkpoint(sys, pretrain_ckpt, false);
    }
    const trainer::DemoData data = trainer::prepare_demo_data(sys, demos);
    trainer::train_stage2(sys, data);

    AblationRow out;
    out.row = row;
    out.seed = seed;
    // Plain seed offsets so each row is reproducible by a direct
    // eval-policy invocation: --seed <row seed>+1000 (ID) / +2000 (ND).
    out.id_success =
        trainer::evaluate_policy(sys, cfg.env, episodes, seed + 1000, "ID")
            .success_rate;
    out.nd_success =
        trainer::evaluate_policy(sys, cfg.env, episodes, seed + 2000, "ND")
            .success_rate;
    return out;
}

int cmd_ablate(const Config& base, const std::string& axis,
               const std::string& demos_path, const std::string& pretrain_ckpt,
               const std::vector<std::uint64_t>& seeds, const std::string& out) {
    std::vector<std::string> rows;
    if (axis == "mask-repr")
        rows = {"none", "center", "bbox", "mask"};
    else if (axis == "multi-phase")
        rows = {"scratch", "frozen", "storm"};
    else
        throw ConfigError("ablate: axis must be mask-repr|multi-phase");

    RunDir run(out);
    run.write_text("resolved_config.json", base.to_json() + "\n");

    std::vector<spriteworld::Trajectory> demos;
    if (demos_path.empty())
        demos = spriteworld::collect_demos(base.env.task, base.env.difficulty,
                                           base.env.demo_count,
                                           RngState::mix(base.seed, 0xDE305),
                                           base.env.horizon);
    else
        demos = spriteworld::load_demos(demos_path);

    std::vector<AblationRow> results;
    for (const std::string& row : rows)
        for (std::uint64_t seed : seeds) {
            std::cout << "ablate[" << axis << "]: row " << row << " seed "
                      << seed << "\n"
                      << std::flush;
            results.push_back(run_ablation_row(base, axis, row, seed, demos,
                                               pretrain_ckpt,
                                               base.eval.episodes));
        }

    std::ostringstream csv;
    csv << "axis,row,seed,id_success,nd_success\n";
    for (const AblationRow& r : results)
        csv << axis << "," << r.row << "," << r.seed << "," << r.id_success
            << "," << r.nd_success << "\n";
    run.write_text("results.csv", csv.str());

    std::ostringstream table;
    table << "row          ID      ND\n";
    json jrows = json::array();
    for (const std::string& row : rows) {
        double id = 0, nd = 0;
        std::size_t n = 0;
        for (const AblationRow& r : results)
            if (r.row == row) {
                id += r.id_success;
                nd += r.nd_success;
                ++n;
            }
        id /= double(n);
        nd /= double(n);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-10s %6.3f  %6.3f\n", row.c_str(), id,
                      nd);
        table << buf;
        jrows.push_back({{"row", row}, {"id", id}, {"nd", nd}});
    }
    run.write_text("results.txt", table.str());
    run.finish({{"command", "ablate"}, {"axis", axis}, {"rows", jrows}});
    std::cout << table.str();
    return 0;
}

int cmd_viz_masks(const Config& cfg, const std::string& ckpt,
                  const std::string& data_path, std::size_t n,
                  const std::string& mask_source, const std::string& out) {
    RunDir run(out);
    System sys = System::build(cfg, false);
    trainer::load_checkpoint(sys, ckpt, false);

    std::vector<spriteworld::PretrainSample> samples;
    if (data_path.empty())
        samples = spriteworld::build_pretrain_set(
            n, RngState::mix(cfg.seed, 0x71a));
    else
        samples = spriteworld::load_pretrain_set(data_path);
    n = std::min(n, samples.size());

    json meta{{"command", "viz-masks"}, {"images", json::array()}};
    core::NoGradGuard ng;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = spriteworld::render_scene(samples[i].spec);
        const features::FeatureMap fm = sys.backbone->encode(r.image);
        const auto bundle = features::make_prompt_bundle(
            samples[i].caption, spriteworld::default_lexicon(), sys.embedder);
        RngState noise(RngState::mix(cfg.seed, 0x71a + i));
        const auto init = sys.slots->init_slots(bundle, noise);
        const auto set =
            sys.slots->attend(core::Var::constant(fm.patches), init);
        const core::Mat masks =
            (mask_source == "attn")
                ? set.attn_masks.val()
                : sys.slots->decode(set.slots).alpha_masks.val();

        const std::string stem = "img" + std::to_string(i);
        core::write_png(r.image, run.path(stem + "_original.png").string());
        json slots_meta = json::array();
        for (std::size_t k = 0; k < masks.rows; ++k) {
            const bool cond = k < init.conditioned.size() && init.conditioned[k];
            const std::string noun = cond ? bundle.nouns[k] : "";
            const std::string name =
                stem + "_slot" + std::to_string(k) +
                (noun.empty() ? "" : "_" + noun) + ".png";
            core::write_png(render_slot_overlay(r.image, masks, fm.grid_h,
                                                fm.grid_w, k, noun),
                            run.path(name).string());
            slots_meta.push_back({{"slot", k},
                                  {"conditioned", cond},
                                  {"noun", noun},
                                  {"file", name}});
        }
        core::write_png(render_argmax_panel(masks, fm.grid_h, fm.grid_w,
                                            r.image.height, r.image.width),
                        run.path(stem + "_argmax.png").string());
        meta["images"].push_back({{"index", i},
                                  {"caption", samples[i].caption},
                                  {"slots", slots_meta}});
    }
    run.finish(meta);
    std::cout << "viz-masks: wrote overlays for " << n << " images to " << out
              << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"slot-based object-centric representation learning and "
                 "imitation on a sprite manipulation world"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_path, demos_path, ckpt_path,
        init_from, mode = "ID", kind = "pretrain", task = "push",
        axis = "mask-repr", mask_source, variant, mask_repr;
    std::uint64_t seed = 0;
    bool seed_set = false, jsonl = false, gt_as_pred = false;
    int n = 100, difficulty = 1;
    std::size_t episodes = 0, viz_n = 8;
    std::vector<std::uint64_t> seeds{1, 2, 3};

    auto add_common = [&](CLI::App* sub, bool needs_out = true) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--seed", seed, "seed override")
            ->each([&](const std::string&) { seed_set = true; });
        if (needs_out)
            sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--device", [](const std::vector<std::string>&) {
            return true;  // accepted for interface compatibility; cpu only
        }, "compute device (cpu)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate datasets");
    add_common(gen);
    gen->add_option("--kind", kind, "pretrain|demos");
    gen->add_option("--task", task, "push|reach");
    gen->add_option("--n", n, "item count");
    gen->add_option("--difficulty", difficulty, "scene difficulty");
    gen->add_flag("--jsonl", jsonl, "also export JSONL with embedded PNG frames");

    CLI::App* pre = app.add_subcommand("pretrain", "stage-1 visual-semantic training");
    add_common(pre);
    pre->add_option("--data", data_path, "pretrain dataset file");

    CLI::App* pol = app.add_subcommand("train-policy", "stage-2 joint slot-policy training");
    add_common(pol);
    pol->add_option("--demos", demos_path, "demo dataset file");
    pol->add_option("--init-from", init_from, "stage-1 checkpoint");
    pol->add_option("--variant", variant, "storm|frozen|scratch");
    pol->add_option("--mask-repr", mask_repr, "none|center|bbox|mask");

    CLI::App* evd = app.add_subcommand("eval-discovery", "object-discovery metrics");
    add_common(evd);
    evd->add_option("--ckpt", ckpt_path, "checkpoint to evaluate");
    evd->add_option("--data", data_path, "dataset file");
    evd->add_option("--mask-source", mask_source, "alpha|attn");
    evd->add_flag("--use-gt-as-pred", gt_as_pred,
                  "score the ground truth against itself");

    CLI::App* evp = app.add_subcommand("eval-policy", "policy success rate");
    add_common(evp);
    evp->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    evp->add_option("--mode", mode, "ID|ND");
    evp->add_option("--episodes", episodes, "episode count");

    CLI::App* abl = app.add_subcommand("ablate", "ablation sweeps");
    add_common(abl);
    abl->add_option("--axis", axis, "mask-repr|multi-phase");
    abl->add_option("--demos", demos_path, "demo dataset file");
    abl->add_option("--pretrain-ckpt", ckpt_path, "stage-1 checkpoint");
    abl->add_option("--seeds", seeds, "seeds, one run per row per seed");

    CLI::App* viz = app.add_subcommand("viz-masks", "slot mask overlays");
    add_common(viz);
    viz->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    viz->add_option("--data", data_path, "dataset file");
    viz->add_option("--n", viz_n, "image count");
    viz->add_option("--mask-source", mask_source, "alpha|attn");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        Config cfg = load_config(config_path, seed, seed_set);
        if (gen->parsed())
            return cmd_gen_data(kind, task, n, seed_set ? seed : cfg.seed,
                                difficulty, out_dir, jsonl);
        if (pre->parsed()) return cmd_pretrain(cfg, data_path, out_dir);
        if (pol->parsed()) {
            if (!variant.empty()) cfg.joint.variant = variant;
            if (!mask_repr.empty())
                cfg.policy.mask_mode =
                    policy::mask_repr_mode_from_string(mask_repr);
            cfg.validate();
            return cmd_train_policy(cfg, demos_path, init_from, out_dir);
        }
        if (evd->parsed())
            return cmd_eval_discovery(cfg, ckpt_path, data_path, out_dir,
                                      mask_source, gt_as_pred);
        if (evp->parsed())
            return cmd_eval_policy(cfg, ckpt_path, out_dir, mode,
                                   episodes ? episodes : cfg.eval.episodes,
                                   seed_set ? seed : cfg.seed);
        if (abl->parsed())
            return cmd_ablate(cfg, axis, demos_path, ckpt_path, seeds, out_dir);
        if (viz->parsed())
            return cmd_viz_masks(cfg, ckpt_path, data_path, viz_n,
                                 mask_source.empty() ? cfg.metric_mask_source
                                                     : mask_source,
                                 out_dir);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.push_back("storm");
    for (const std::string& a : args) full.push_back(a);
    std::vector<const char*> argv;
    for (const std::string& a : full) argv.push_back(a.c_str());
    return run_cli(int(argv.size()), argv.data());
}

}  // namespace storm::cli
