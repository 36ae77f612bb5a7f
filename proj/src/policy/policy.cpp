#include "storm/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace storm::policy {

using core::Mat;
using core::ParamStore;
using core::RngState;
using core::Var;

MaskReprMode mask_repr_mode_from_string(const std::string& s) {
    if (s == "none") return MaskReprMode::None;
    if (s == "center") return MaskReprMode::Center;
    if (s == "bbox") return MaskReprMode::Bbox;
    if (s == "mask") return MaskReprMode::Mask;
    throw std::invalid_argument("unknown mask representation: " + s);
}

std::string to_string(MaskReprMode m) {
    switch (m) {
        case MaskReprMode::None: return "none";
        case MaskReprMode::Center: return "center";
        case MaskReprMode::Bbox: return "bbox";
        case MaskReprMode::Mask: return "mask";
    }
    return "?";
}

std::size_t PolicyConfig::repr_dim() const {
    switch (mask_mode) {
        case MaskReprMode::None: return 0;
        case MaskReprMode::Center: return 2;
        case MaskReprMode::Bbox: return 4;
        case MaskReprMode::Mask: return mask_embed_dim;
    }
    return 0;
}

void PolicyConfig::validate() const {
    if (model_dim % n_heads != 0)
        throw std::invalid_argument("policy: model_dim must divide by heads");
    if (history < 1 || n_slots < 1 || chunk < 1 || action_dim < 1 ||
        n_components < 1)
        throw std::invalid_argument("policy: positive sizes required");
    if (log_scale_min >= log_scale_max)
        throw std::invalid_argument("policy: bad log-scale clamp range");
}

// ---------------------------------------------------------------------------
// mask representations

Mat mask_centers(const Mat& soft_masks, std::size_t grid_h,
                 std::size_t grid_w) {
    if (soft_masks.cols != grid_h * grid_w)
        throw std::invalid_argument("mask_centers: grid mismatch");
    Mat out(soft_masks.rows, 2);
    for (std::size_t k = 0; k < soft_masks.rows; ++k) {
        double mass = 0.0, cx = 0.0, cy = 0.0;
        for (std::size_t y = 0; y < grid_h; ++y)
            for (std::size_t x = 0; x < grid_w; ++x) {
                const double m = soft_masks.at(k, y * grid_w + x);
                mass += m;
                cx += m * (double(x) + 0.5) / double(grid_w);
                cy += m * (double(y) + 0.5) / double(grid_h);
            }
        if (mass > 0.0) {
            out.at(k, 0) = cx / mass;
            out.at(k, 1) = cy / mass;
        } else {
            out.at(k, 0) = 0.5;
            out.at(k, 1) = 0.5;
        }
    }
    return out;
}

Mat mask_bboxes(const Mat& soft_masks, std::size_t grid_h,
                std::size_t grid_w) {
    if (soft_masks.cols != grid_h * grid_w)
        throw std::invalid_argument("mask_bboxes: grid mismatch");
    const Mat centers = mask_centers(soft_masks, grid_h, grid_w);
    const std::size_t kk = soft_masks.rows;
    const std::size_t n = soft_masks.cols;

    std::vector<std::size_t> winner(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        double best = soft_masks.at(0, j);
        for (std::size_t k = 1; k < kk; ++k)
            if (soft_masks.at(k, j) > best) {
                best = soft_masks.at(k, j);
                winner[j] = k;
            }
    }

    Mat out(kk, 4);
    for (std::size_t k = 0; k < kk; ++k) {
        std::size_t xmin = grid_w, xmax = 0, ymin = grid_h, ymax = 0;
        bool any = false;
        for (std::size_t y = 0; y < grid_h; ++y)
            for (std::size_t x = 0; x < grid_w; ++x)
                if (winner[y * grid_w + x] == k) {
                    any = true;
                    xmin = std::min(xmin, x);
                    xmax = std::max(xmax, x);
                    ymin = std::min(ymin, y);
                    ymax = std::max(ymax, y);
                }
        if (any) {
            out.at(k, 0) = double(xmin) / double(grid_w);
            out.at(k, 1) = double(ymin) / double(grid_h);
            out.at(k, 2) = double(xmax + 1) / double(grid_w);
            out.at(k, 3) = double(ymax + 1) / double(grid_h);
        } else {
            // slot never wins a pixel: degenerate box at its soft center
            out.at(k, 0) = centers.at(k, 0);
            out.at(k, 1) = centers.at(k, 1);
            out.at(k, 2) = centers.at(k, 0);
            out.at(k, 3) = centers.at(k, 1);
        }
    }
    return out;
}

MaskEmbedder::MaskEmbedder(const PolicyConfig& cfg, ParamStore& store,
                           RngState& rng) {
    const std::size_t oh = (cfg.grid_h + 1) / 2, ow = (cfg.grid_w + 1) / 2;
    const std::size_t oh2 = (oh + 1) / 2, ow2 = (ow + 1) / 2;
    flat_dim_ = 8 * oh2 * ow2;
    w1_ = store.create_gaussian("policy/mask_embed/conv1/w", 4, 9, rng,
                                1.0 / 3.0);
    b1_ = store.create_zeros("policy/mask_embed/conv1/b", 4, 1);
    w2_ = store.create_gaussian("policy/mask_embed/conv2/w", 8, 4 * 9, rng,
                                1.0 / 6.0);
    b2_ = store.create_zeros("policy/mask_embed/conv2/b", 8, 1);
    wf_ = store.create_gaussian("policy/mask_embed/fc/w", flat_dim_,
                                cfg.mask_embed_dim, rng,
                                1.0 / std::sqrt(double(flat_dim_)));
    bf_ = store.create_zeros("policy/mask_embed/fc/b", 1, cfg.mask_embed_dim);
}

Var MaskEmbedder::embed(const Mat& hard_masks, std::size_t grid_h,
                        std::size_t grid_w) const {
    using namespace core;
    std::vector<Var> rows;
    rows.reserve(hard_masks.rows);
    for (std::size_t k = 0; k < hard_masks.rows; ++k) {
        Mat m(1, grid_h * grid_w);
        std::copy(hard_masks.row(k), hard_masks.row(k) + m.size(), m.data());
        Var x = Var::constant(std::move(m));
        Var c1 = relu(add_colvec(matmul(w1_, im2col(x, grid_h, grid_w, 3, 3,
                                                    2, 1)),
                                 b1_));
        const std::size_t oh = (grid_h + 1) / 2, ow = (grid_w + 1) / 2;
        Var c2 = relu(add_colvec(matmul(w2_, im2col(c1, oh, ow, 3, 3, 2, 1)),
                                 b2_));
        Var flat = reshape(c2, 1, flat_dim_);
        rows.push_back(add_rowvec(matmul(flat, wf_), bf_));
    }
    return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

// ---------------------------------------------------------------------------
// network

namespace {
double xavier(std::size_t fan_in) { return 1.0 / std::sqrt(double(fan_in)); }
}  // namespace

PolicyNet::PolicyNet(PolicyConfig cfg, ParamStore& store, RngState& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.model_dim;
    const std::size_t in_dim = cfg_.slot_dim + cfg_.repr_dim();
    const std::size_t cd = cfg_.chunk_dim();
    const std::size_t c = cfg_.n_components;

    w_slot_ = store.create_gaussian("policy/tok/w_slot", in_dim, d, rng,
                                    xavier(in_dim));
    b_slot_ = store.create_zeros("policy/tok/b_slot", 1, d);
    w_task_ = store.create_gaussian("policy/tok/w_task", cfg_.text_dim, d, rng,
                                    xavier(cfg_.text_dim));
    b_task_ = store.create_zeros("policy/tok/b_task", 1, d);
    w_prop_ = store.create_gaussian("policy/tok/w_prop", 3, d, rng, xavier(3));
    b_prop_ = store.create_zeros("policy/tok/b_prop", 1, d);
    act_token_ = store.create_gaussian("policy/tok/act", 1, d, rng, 0.02);
    pos_ = store.create_gaussian("policy/tok/pos", cfg_.n_slots + 2, d, rng,
                                 0.02);
    tpos_ = store.create_gaussian("policy/tok/tpos", cfg_.history, d, rng,
                                  0.02);

    layers_.resize(cfg_.n_layers);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "policy/layer" + std::to_string(l) + "/";
        Layer& L = layers_[l];
        L.ln1_g = store.create_full(p + "ln1/g", 1, d, 1.0);
        L.ln1_b = store.create_zeros(p + "ln1/b", 1, d);
        L.wq = store.create_gaussian(p + "attn/wq", d, d, rng, xavier(d));
        L.bq = store.create_zeros(p + "attn/bq", 1, d);
        L.wk = store.create_gaussian(p + "attn/wk", d, d, rng, xavier(d));
        L.bk = store.create_zeros(p + "attn/bk", 1, d);
        L.wv = store.create_gaussian(p + "attn/wv", d, d, rng, xavier(d));
        L.bv = store.create_zeros(p + "attn/bv", 1, d);
        L.wo = store.create_gaussian(p + "attn/wo", d, d, rng, xavier(d));
        L.bo = store.create_zeros(p + "attn/bo", 1, d);
        L.ln2_g = store.create_full(p + "ln2/g", 1, d, 1.0);
        L.ln2_b = store.create_zeros(p + "ln2/b", 1, d);
        L.mlp_w1 = store.create_gaussian(p + "mlp/w1", d, 4 * d, rng,
                                         xavier(d));
        L.mlp_b1 = store.create_zeros(p + "mlp/b1", 1, 4 * d);
        L.mlp_w2 = store.create_gaussian(p + "mlp/w2", 4 * d, d, rng,
                                         xavier(4 * d));
        L.mlp_b2 = store.create_zeros(p + "mlp/b2", 1, d);
    }
    final_ln_g_ = store.create_full("policy/final_ln/g", 1, d, 1.0);
    final_ln_b_ = store.create_zeros("policy/final_ln/b", 1, d);

    head_w_w_ = store.create_gaussian("policy/head/w_w", d, c, rng, xavier(d));
    head_b_w_ = store.create_zeros("policy/head/b_w", 1, c);
    head_w_m_ = store.create_gaussian("policy/head/w_m", d, c * cd, rng,
                                      0.1 * xavier(d));
    head_b_m_ = store.create_zeros("policy/head/b_m", 1, c * cd);
    head_w_s_ = store.create_gaussian("policy/head/w_s", d, c * cd, rng,
                                      0.1 * xavier(d));
    head_b_s_ = store.create_zeros("policy/head/b_s", 1, c * cd);

    // Additive mask: token i attends token j iff frame(j) <= frame(i); the
    // [ACT] token (virtual frame H) attends everything and is attended by
    // nothing else.
    const std::size_t L = cfg_.seq_len();
    const std::size_t per = cfg_.n_slots + 2;
    attn_mask_ = Mat(L, L);
    auto frame_of = [&](std::size_t i) {
        return i + 1 == L ? cfg_.history : i / per;
    };
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
            attn_mask_.at(i, j) = frame_of(j) <= frame_of(i) ? 0.0 : -1e30;
}

Var PolicyNet::assemble_tokens(const SampleInput& input) const {
    using namespace core;
    if (input.frames.empty())
        throw std::invalid_argument("assemble_tokens: no frames");
    if (input.frames.size() > cfg_.history)
        throw std::invalid_argument("assemble_tokens: more frames than H");
    if (input.task_emb.size() != cfg_.text_dim)
        throw std::invalid_argument("assemble_tokens: task embedding dim");

    // Left-pad young episodes by repeating the earliest frame.
    std::vector<const FrameInput*> frames;
    for (std::size_t i = input.frames.size(); i < cfg_.history; ++i)
        frames.push_back(&input.frames.front());
    for (const FrameInput& f : input.frames) frames.push_back(&f);

    Mat task(1, cfg_.text_dim);
    std::copy(input.task_emb.begin(), input.task_emb.end(), task.data());
    Var task_tok = add_rowvec(matmul(Var::constant(std::move(task)), w_task_),
                              b_task_);

    std::vector<Var> blocks;
    blocks.reserve(cfg_.history + 1);
    for (std::size_t f = 0; f < cfg_.history; ++f) {
        const FrameInput& fr = *frames[f];
        if (fr.slots.rows() != cfg_.n_slots)
            throw std::invalid_argument(
                "assemble_tokens: inconsistent slot count across frames");
        Var slot_in = fr.slots;
        if (cfg_.repr_dim() > 0) {
            if (!fr.repr.defined() || fr.repr.rows() != cfg_.n_slots ||
                fr.repr.cols() != cfg_.repr_dim())
                throw std::invalid_argument(
                    "assemble_tokens: mask repr shape mismatch");
            slot_in = concat_cols({fr.slots, fr.repr});
        }
        Var slot_tok = add_rowvec(matmul(slot_in, w_slot_), b_slot_);
        Mat prop(1, 3);
        prop.v = {fr.proprio[0], fr.proprio[1], fr.proprio[2]};
        Var prop_tok = add_rowvec(matmul(Var::constant(std::move(prop)),
                                         w_prop_),
                                  b_prop_);
        Var block = concat_rows({slot_tok, task_tok, prop_tok});
        block = add(block, pos_);
        block = add_rowvec(block, slice_rows(tpos_, f, f + 1));
        blocks.push_back(block);
    }
    blocks.push_back(act_token_);
    return concat_rows(blocks);
}

Var PolicyNet::transformer(const Var& tokens) const {
    using namespace core;
    const std::size_t d = cfg_.model_dim;
    const std::size_t nh = cfg_.n_heads;
    const std::size_t dh = d / nh;
    const double scale = 1.0 / std::sqrt(double(dh));
    const Var mask = Var::constant(attn_mask_);

    Var x = tokens;
    for (const Layer& L : layers_) {
        Var h = layer_norm_rows(x, L.ln1_g, L.ln1_b);
        Var q = add_rowvec(matmul(h, L.wq), L.bq);
        Var k = add_rowvec(matmul(h, L.wk), L.bk);
        Var v = add_rowvec(matmul(h, L.wv), L.bv);
        std::vector<Var> heads;
        heads.reserve(nh);
        for (std::size_t hd = 0; hd < nh; ++hd) {
            Var qh = slice_cols(q, hd * dh, (hd + 1) * dh);
            Var kh = slice_cols(k, hd * dh, (hd + 1) * dh);
            Var vh = slice_cols(v, hd * dh, (hd + 1) * dh);
            Var scores = add(mul_scalar(matmul(qh, kh, false, true), scale),
                             mask);
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        Var attn_out = nh == 1 ? heads[0] : concat_cols(heads);
        x = add(x, add_rowvec(matmul(attn_out, L.wo), L.bo));

        Var m = layer_norm_rows(x, L.ln2_g, L.ln2_b);
        m = gelu(add_rowvec(matmul(m, L.mlp_w1), L.mlp_b1));
        x = add(x, add_rowvec(matmul(m, L.mlp_w2), L.mlp_b2));
    }
    return layer_norm_rows(x, final_ln_g_, final_ln_b_);
}

GmmOut PolicyNet::forward(const SampleInput& input) const {
    using namespace core;
    Var tokens = assemble_tokens(input);
    Var x = transformer(tokens);
    const std::size_t L = cfg_.seq_len();
    Var act = slice_rows(x, L - 1, L);  // 1 x d

    GmmOut out;
    out.weights_logits = add_rowvec(matmul(act, head_w_w_), head_b_w_);
    Var means = add_rowvec(matmul(act, head_w_m_), head_b_m_);
    Var logs = clamp(add_rowvec(matmul(act, head_w_s_), head_b_s_),
                     cfg_.log_scale_min, cfg_.log_scale_max);
    out.means = reshape(means, cfg_.n_components, cfg_.chunk_dim());
    out.log_scales = reshape(logs, cfg_.n_components, cfg_.chunk_dim());
    if (!out.weights_logits.val().all_finite() ||
        !out.means.val().all_finite() || !out.log_scales.val().all_finite())
        throw std::runtime_error("policy_forward: non-finite logits");
    return out;
}

GmmActionDistribution PolicyNet::distribution(const GmmOut& out) {
    GmmActionDistribution d;
    const Mat& wl = out.weights_logits.val();
    d.weights = Mat(1, wl.cols);
    double mx = wl.v[0];
    for (double v : wl.v) mx = std::max(mx, v);
    double denom = 0.0;
    for (std::size_t i = 0; i < wl.cols; ++i) {
        d.weights.v[i] = std::exp(wl.v[i] - mx);
        denom += d.weights.v[i];
    }
    for (double& v : d.weights.v) v /= denom;
    d.means = out.means.val();
    d.log_scales = out.log_scales.val();
    return d;
}

// ---------------------------------------------------------------------------
// objectives and sampling

Var gmm_nll(const GmmOut& out, const Mat& target) {
    using namespace core;
    const std::size_t c = out.means.rows();
    const std::size_t dim = out.means.cols();
    if (target.rows != 1 || target.cols != dim)
        throw std::invalid_argument("gmm_nll: target shape mismatch");
    static const double log2pi = std::log(2.0 * 3.14159265358979323846);

    const Var t = Var::constant(target);
    Var diff = sub_rowvec(out.means, t);                    // C x D
    Var inv_sigma = exp_(neg(out.log_scales));              // C x D
    Var z = mul(diff, inv_sigma);
    Var quad = mul_scalar(row_sums(mul(z, z)), -0.5);       // C x 1
    Var logdet = neg(row_sums(out.log_scales));             // C x 1
    Var comp = add(add(quad, logdet),
                   Var::constant(Mat(c, 1, -0.5 * double(dim) * log2pi)));

    // log softmax of the mixture logits
    Var lse_w = logsumexp_rows(out.weights_logits);         // 1 x 1
    Var ones_c = Var::constant(Mat(c, 1, 1.0));
    Var logw = sub(transpose(out.weights_logits),
                   scale_by_scalar(ones_c, lse_w));         // C x 1

    Var joint = transpose(add(logw, comp));                 // 1 x C
    return neg(logsumexp_rows(joint));                      // 1 x 1
}

Var gmm_mean_mse(const GmmOut& out, const Mat& target) {
    using namespace core;
    Var weights = softmax_rows(out.weights_logits);   // 1 x C
    Var pred = matmul(weights, out.means);            // 1 x D
    Var diff = sub(pred, Var::constant(target));
    return mean_all(mul(diff, diff));
}

std::vector<double> sample_action(const GmmActionDistribution& dist,
                                  RngState& rng, bool deterministic) {
    const std::size_t c = dist.weights.cols;
    const std::size_t dim = dist.means.cols;
    std::size_t comp = 0;
    if (deterministic) {
        double best = dist.weights.v[0];
        for (std::size_t i = 1; i < c; ++i)
            if (dist.weights.v[i] > best) {
                best = dist.weights.v[i];
                comp = i;
            }
    } else {
        const double u = rng.uniform();
        double acc = 0.0;
        comp = c - 1;
        for (std::size_t i = 0; i < c; ++i) {
            acc += dist.weights.v[i];
            if (u < acc) {
                comp = i;
                break;
            }
        }
    }
    std::vector<double> out(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        out[j] = dist.means.at(comp, j);
        if (!deterministic)
            out[j] += std::exp(dist.log_scales.at(comp, j)) * rng.normal();
    }
    return out;
}

std::array<double, 3> first_step(const std::vector<double>& chunk,
                                 std::size_t action_dim) {
    if (chunk.size() < action_dim)
        throw std::invalid_argument("first_step: chunk too short");
    std::array<double, 3> a{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < std::min<std::size_t>(action_dim, 3); ++i)
        a[i] = chunk[i];
    return a;
}

ActionNormalizer ActionNormalizer::fit(
    const std::vector<std::vector<std::array<double, 3>>>& action_tapes) {
    ActionNormalizer n;
    n.lo.assign(3, 1e300);
    n.hi.assign(3, -1e300);
    for (const auto& tape : action_tapes)
        for (const auto& a : tape)
            for (std::size_t d = 0; d < 3; ++d) {
                n.lo[d] = std::min(n.lo[d], a[d]);
                n.hi[d] = std::max(n.hi[d], a[d]);
            }
    if (action_tapes.empty())
        throw std::invalid_argument("ActionNormalizer: no demonstrations");
    return n;
}

std::vector<double> ActionNormalizer::normalize_chunk(
    const std::vector<std::array<double, 3>>& chunk) const {
    std::vector<double> out;
    out.reserve(chunk.size() * 3);
    for (const auto& a : chunk)
        for (std::size_t d = 0; d < 3; ++d) {
            const double span = hi[d] - lo[d];
            out.push_back(span > 0.0
                              ? 2.0 * (a[d] - lo[d]) / span - 1.0
                              : 0.0);
        }
    return out;
}

std::array<double, 3> ActionNormalizer::denormalize_step(
    const std::array<double, 3>& a) const {
    std::array<double, 3> out{};
    for (std::size_t d = 0; d < 3; ++d) {
        const double span = hi[d] - lo[d];
        out[d] = span > 0.0 ? lo[d] + (a[d] + 1.0) * 0.5 * span : lo[d];
    }
    return out;
}

}  // namespace storm::policy
