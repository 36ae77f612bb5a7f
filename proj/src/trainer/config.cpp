#include "storm/trainer/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "storm/core/rng.hpp"

namespace storm::trainer {

using nlohmann::json;

namespace {

// Reads j[key] into out when present; the json path is reported on type
// errors so config mistakes are easy to locate.
template <typename T>
void get_if(const json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::runtime_error("config: bad value at " + path + "/" + key +
                                 ": " + e.what());
    }
}

void parse_weights(const json& j, objectives::LossWeights& w,
                   const std::string& path) {
    get_if(j, "recons", w.recons, path);
    get_if(j, "sem", w.sem, path);
    get_if(j, "pen", w.pen, path);
    get_if(j, "temporal", w.temporal, path);
}

void parse_phase(const json& j, PhaseConfig& p, const std::string& path) {
    get_if(j, "steps", p.steps, path);
    get_if(j, "batch_size", p.batch_size, path);
    get_if(j, "base_lr", p.base_lr, path);
    get_if(j, "warmup_steps", p.warmup_steps, path);
    get_if(j, "eval_every", p.eval_every, path);
    get_if(j, "snapshot_every", p.snapshot_every, path);
    if (j.contains("weights")) parse_weights(j.at("weights"), p.weights, path + "/weights");
}

json weights_json(const objectives::LossWeights& w) {
    return {{"recons", w.recons},
            {"sem", w.sem},
            {"pen", w.pen},
            {"temporal", w.temporal}};
}

json phase_json(const PhaseConfig& p) {
    return {{"steps", p.steps},
            {"batch_size", p.batch_size},
            {"base_lr", p.base_lr},
            {"warmup_steps", p.warmup_steps},
            {"eval_every", p.eval_every},
            {"snapshot_every", p.snapshot_every},
            {"weights", weights_json(p.weights)}};
}

}  // namespace

void Config::validate() const {
    slot.validate();
    policy.validate();
    if (pretrain.warmup_steps >= pretrain.steps)
        throw std::runtime_error("config: pretrain/warmup_steps must be < steps");
    if (joint.warmup_steps >= joint.steps)
        throw std::runtime_error("config: joint/warmup_steps must be < steps");
    if (pretrain.base_lr <= 0.0 || joint.base_lr <= 0.0 || joint.slot_lr <= 0.0)
        throw std::runtime_error("config: learning rates must be positive");
    if (tau <= 0.0) throw std::runtime_error("config: tau must be positive");
    if (joint.variant != "storm" && joint.variant != "frozen" &&
        joint.variant != "scratch")
        throw std::runtime_error("config: joint/variant must be storm|frozen|scratch");
    if (joint.objective != "nll" && joint.objective != "mse")
        throw std::runtime_error("config: joint/objective must be nll|mse");
    if (mask_source != "attn" && mask_source != "alpha")
        throw std::runtime_error("config: mask_source must be attn|alpha");
    if (metric_mask_source != "attn" && metric_mask_source != "alpha")
        throw std::runtime_error("config: metric_mask_source must be attn|alpha");
    if (env.task != "push" && env.task != "reach")
        throw std::runtime_error("config: env/task must be push|reach");
    if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
        throw std::runtime_error("config: eval_fraction must be in (0,1)");
    if (slot.feature_dim != backend.dim)
        throw std::runtime_error(
            "config: slot/feature_dim must equal backend/dim");
    if (slot.text_dim != text_dim)
        throw std::runtime_error("config: slot/text_dim must equal text_dim");
    if (policy.slot_dim != slot.slot_dim || policy.n_slots != slot.n_slots)
        throw std::runtime_error(
            "config: policy slot dims must match the slot module");
    if (policy.text_dim != text_dim)
        throw std::runtime_error("config: policy/text_dim must equal text_dim");
}

std::string Config::to_json(int indent) const {
    json j;
    j["seed"] = seed;
    j["text_dim"] = text_dim;
    j["tau"] = tau;
    j["mask_source"] = mask_source;
    j["metric_mask_source"] = metric_mask_source;
    j["pool_conditioned_only"] = pool_conditioned_only;
    j["pretrain_images"] = pretrain_images;
    j["eval_fraction"] = eval_fraction;
    j["backend"] = {{"kind", backend.kind},
                    {"seed", backend.seed},
                    {"patch", backend.patch},
                    {"dim", backend.dim},
                    {"path", backend.path}};
    j["slot"] = {{"n_slots", slot.n_slots},
                 {"slot_dim", slot.slot_dim},
                 {"n_iters", slot.n_iters},
                 {"epsilon", slot.epsilon},
                 {"n_conditioned", slot.n_conditioned},
                 {"feature_dim", slot.feature_dim},
                 {"text_dim", slot.text_dim},
                 {"n_patches", slot.n_patches},
                 {"mlp_hidden", slot.mlp_hidden},
                 {"decoder_hidden", slot.decoder_hidden},
                 {"decoder_layers", slot.decoder_layers}};
    j["policy"] = {{"mask_mode", policy::to_string(policy.mask_mode)},
                   {"mask_embed_dim", policy.mask_embed_dim},
                   {"model_dim", policy.model_dim},
                   {"n_layers", policy.n_layers},
                   {"n_heads", policy.n_heads},
                   {"history", policy.history},
                   {"chunk", policy.chunk},
                   {"action_dim", policy.action_dim},
                   {"n_components", policy.n_components},
                   {"log_scale_min", policy.log_scale_min},
                   {"log_scale_max", policy.log_scale_max}};
    j["pretrain"] = phase_json(pretrain);
    json joint_j = phase_json(joint);
    joint_j["slot_lr"] = joint.slot_lr;
    joint_j["variant"] = joint.variant;
    joint_j["objective"] = joint.objective;
    joint_j["semantic_term"] = joint.semantic_term;
    joint_j["temporal_tau"] = joint.temporal_tau;
    j["joint"] = joint_j;
    j["env"] = {{"task", env.task},
                {"difficulty", env.difficulty},
                {"horizon", env.horizon},
                {"nd_distractors", env.nd_distractors},
                {"demo_count", env.demo_count}};
    j["eval"] = {{"episodes", eval.episodes}};
    return j.dump(indent);
}

std::uint64_t Config::hash() const {
    const std::string canon = to_json(-1);
    return core::fnv1a(canon.data(), canon.size());
}

std::uint64_t Config::visual_hash() const {
    json j;
    j["slot"] = {slot.n_slots, slot.slot_dim, slot.n_iters, slot.n_conditioned,
                 slot.feature_dim, slot.text_dim, slot.n_patches,
                 slot.mlp_hidden, slot.decoder_hidden, slot.decoder_layers};
    j["backend"] = {backend.kind, backend.seed, backend.patch, backend.dim};
    j["text_dim"] = text_dim;
    const std::string canon = j.dump();
    return core::fnv1a(canon.data(), canon.size());
}

Config Config::from_json_text(const std::string& text,
                              const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        // byte offset -> line:column for a line-anchored message
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw std::runtime_error("config: parse error in " + origin +
                                 " at line " + std::to_string(line) +
                                 ", column " + std::to_string(col) + ": " +
                                 e.what());
    }

    Config c = desk_preset();
    if (j.contains("preset")) {
        const std::string p = j.at("preset").get<std::string>();
        if (p == "paper") c = paper_preset();
        else if (p == "desk") c = desk_preset();
        else if (p == "smoke") c = smoke_preset();
        else throw std::runtime_error("config: unknown preset " + p);
    }

    get_if(j, "seed", c.seed, "");
    get_if(j, "text_dim", c.text_dim, "");
    get_if(j, "tau", c.tau, "");
    get_if(j, "mask_source", c.mask_source, "");
    get_if(j, "metric_mask_source", c.metric_mask_source, "");
    get_if(j, "pool_conditioned_only", c.pool_conditioned_only, "");
    get_if(j, "pretrain_images", c.pretrain_images, "");
    get_if(j, "eval_fraction", c.eval_fraction, "");
    if (j.contains("backend")) {
        const json& b = j.at("backend");
        get_if(b, "kind", c.backend.kind, "/backend");
        get_if(b, "seed", c.backend.seed, "/backend");
        get_if(b, "patch", c.backend.patch, "/backend");
        get_if(b, "dim", c.backend.dim, "/backend");
        get_if(b, "path", c.backend.path, "/backend");
    }
    if (j.contains("slot")) {
        const json& s = j.at("slot");
        get_if(s, "n_slots", c.slot.n_slots, "/slot");
        get_if(s, "slot_dim", c.slot.slot_dim, "/slot");
        get_if(s, "n_iters", c.slot.n_iters, "/slot");
        get_if(s, "epsilon", c.slot.epsilon, "/slot");
        get_if(s, "n_conditioned", c.slot.n_conditioned, "/slot");
        get_if(s, "n_patches", c.slot.n_patches, "/slot");
        get_if(s, "mlp_hidden", c.slot.mlp_hidden, "/slot");
        get_if(s, "decoder_hidden", c.slot.decoder_hidden, "/slot");
        get_if(s, "decoder_layers", c.slot.decoder_layers, "/slot");
    }
    if (j.contains("policy")) {
        const json& p = j.at("policy");
        std::string mode = policy::to_string(c.policy.mask_mode);
        get_if(p, "mask_mode", mode, "/policy");
        c.policy.mask_mode = policy::mask_repr_mode_from_string(mode);
        get_if(p, "mask_embed_dim", c.policy.mask_embed_dim, "/policy");
        get_if(p, "model_dim", c.policy.model_dim, "/policy");
        get_if(p, "n_layers", c.policy.n_layers, "/policy");
        get_if(p, "n_heads", c.policy.n_heads, "/policy");
        get_if(p, "history", c.policy.history, "/policy");
        get_if(p, "chunk", c.policy.chunk, "/policy");
        get_if(p, "n_components", c.policy.n_components, "/policy");
        get_if(p, "log_scale_min", c.policy.log_scale_min, "/policy");
        get_if(p, "log_scale_max", c.policy.log_scale_max, "/policy");
    }
    if (j.contains("pretrain")) parse_phase(j.at("pretrain"), c.pretrain, "/pretrain");
    if (j.contains("joint")) {
        const json& jj = j.at("joint");
        parse_phase(jj, c.joint, "/joint");
        get_if(jj, "slot_lr", c.joint.slot_lr, "/joint");
        get_if(jj, "variant", c.joint.variant, "/joint");
        get_if(jj, "objective", c.joint.objective, "/joint");
        get_if(jj, "semantic_term", c.joint.semantic_term, "/joint");
        get_if(jj, "temporal_tau", c.joint.temporal_tau, "/joint");
    }
    if (j.contains("env")) {
        const json& e = j.at("env");
        get_if(e, "task", c.env.task, "/env");
        get_if(e, "difficulty", c.env.difficulty, "/env");
        get_if(e, "horizon", c.env.horizon, "/env");
        get_if(e, "nd_distractors", c.env.nd_distractors, "/env");
        get_if(e, "demo_count", c.env.demo_count, "/env");
    }
    if (j.contains("eval")) {
        get_if(j.at("eval"), "episodes", c.eval.episodes, "/eval");
    }

    // Derived couplings: the slot module consumes the backend feature grid
    // and the shared text dimension; the policy consumes slots.
    c.slot.feature_dim = c.backend.dim;
    c.slot.text_dim = c.text_dim;
    c.policy.slot_dim = c.slot.slot_dim;
    c.policy.n_slots = c.slot.n_slots;
    c.policy.text_dim = c.text_dim;
    c.policy.grid_h = 8;
    c.policy.grid_w = 8;
    c.validate();
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json_text(ss.str(), path);
}

Config Config::desk_preset() {
    Config c;
    c.backend.dim = 32;
    c.slot.n_slots = 7;
    c.slot.slot_dim = 64;
    c.slot.feature_dim = c.backend.dim;
    c.slot.text_dim = c.text_dim;
    c.slot.decoder_hidden = 64;
    c.slot.decoder_layers = 3;
    c.policy.slot_dim = c.slot.slot_dim;
    c.policy.n_slots = c.slot.n_slots;
    c.policy.text_dim = c.text_dim;
    c.pretrain.steps = 20000;
    c.pretrain.batch_size = 32;
    c.pretrain.base_lr = 4e-4;
    c.pretrain.warmup_steps = 1000;
    c.joint.steps = 10000;
    c.joint.batch_size = 16;
    c.joint.base_lr = 3e-4;
    c.joint.warmup_steps = 200;
    c.joint.slot_lr = 1e-5;
    return c;
}

Config Config::paper_preset() {
    Config c = desk_preset();
    // Full-scale schedule kept as a named preset: 300k steps, batch 64,
    // 10k warmup at 4e-4; joint phase 150k at a reduced slot lr of 1e-5.
    c.pretrain.steps = 300000;
    c.pretrain.batch_size = 64;
    c.pretrain.base_lr = 4e-4;
    c.pretrain.warmup_steps = 10000;
    c.slot.n_slots = 7;
    c.slot.slot_dim = 256;
    c.policy.slot_dim = 256;
    c.policy.model_dim = 256;
    c.policy.n_layers = 4;
    c.policy.n_heads = 8;
    c.joint.steps = 150000;
    c.joint.slot_lr = 1e-5;
    return c;
}

Config Config::smoke_preset() {
    Config c = desk_preset();
    c.backend.dim = 16;
    c.slot.feature_dim = 16;
    c.slot.n_slots = 4;
    c.slot.slot_dim = 24;
    c.slot.decoder_hidden = 24;
    c.slot.n_conditioned = 2;
    c.policy.slot_dim = 24;
    c.policy.n_slots = 4;
    c.policy.model_dim = 32;
    c.policy.n_layers = 1;
    c.policy.n_heads = 2;
    c.policy.history = 2;
    c.policy.chunk = 4;
    c.policy.n_components = 2;
    c.pretrain_images = 60;
    c.pretrain.steps = 30;
    c.pretrain.batch_size = 4;
    c.pretrain.warmup_steps = 5;
    c.joint.steps = 20;
    c.joint.batch_size = 4;
    c.joint.warmup_steps = 5;
    c.env.demo_count = 6;
    c.env.horizon = 40;
    c.eval.episodes = 4;
    return c;
}

double lr_at(std::size_t step, const PhaseConfig& phase) {
    if (step > phase.steps)
        throw std::invalid_argument("lr_at: step " + std::to_string(step) +
                                    " beyond schedule end " +
                                    std::to_string(phase.steps));
    if (step <= phase.warmup_steps) {
        if (phase.warmup_steps == 0) return phase.base_lr;
        return phase.base_lr * double(step) / double(phase.warmup_steps);
    }
    const double progress = double(step - phase.warmup_steps) /
                            double(phase.steps - phase.warmup_steps);
    return phase.base_lr * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace storm::trainer
