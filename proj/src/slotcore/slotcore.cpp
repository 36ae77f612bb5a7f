#include "storm/slotcore/slotcore.hpp"

#include <cmath>
#include <stdexcept>

namespace storm::slotcore {

using core::Mat;
using core::ParamStore;
using core::RngState;
using core::Var;

void SlotAttentionConfig::validate() const {
    if (n_slots < 1) throw std::invalid_argument("config: n_slots >= 1");
    if (n_conditioned < 1 || n_conditioned > n_slots)
        throw std::invalid_argument(
            "config: need 1 <= n_conditioned <= n_slots");
    if (slot_dim < 1 || feature_dim < 1 || text_dim < 1 || n_patches < 1)
        throw std::invalid_argument("config: dimensions must be positive");
    if (decoder_layers < 2)
        throw std::invalid_argument("config: decoder needs >= 2 layers");
    if (epsilon <= 0.0) throw std::invalid_argument("config: epsilon > 0");
}

namespace {

double xavier(std::size_t fan_in) { return 1.0 / std::sqrt(double(fan_in)); }

}  // namespace

SlotCore::SlotCore(SlotAttentionConfig cfg, ParamStore& store, RngState& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const std::size_t df = cfg_.feature_dim;
    const std::size_t ds = cfg_.slot_dim;
    const std::size_t dt = cfg_.text_dim;
    const std::size_t hid = cfg_.mlp_hidden ? cfg_.mlp_hidden : ds;

    norm_in_g_ = store.create_full("slotcore/norm_in/g", 1, df, 1.0);
    norm_in_b_ = store.create_zeros("slotcore/norm_in/b", 1, df);
    wk_ = store.create_gaussian("slotcore/attn/wk", df, ds, rng, xavier(df));
    wv_ = store.create_gaussian("slotcore/attn/wv", df, ds, rng, xavier(df));
    wq_ = store.create_gaussian("slotcore/attn/wq", ds, ds, rng, xavier(ds));
    norm_slots_g_ = store.create_full("slotcore/norm_slots/g", 1, ds, 1.0);
    norm_slots_b_ = store.create_zeros("slotcore/norm_slots/b", 1, ds);

    gru_wz_ = store.create_gaussian("slotcore/gru/wz", ds, ds, rng, xavier(ds));
    gru_uz_ = store.create_gaussian("slotcore/gru/uz", ds, ds, rng, xavier(ds));
    gru_bz_ = store.create_zeros("slotcore/gru/bz", 1, ds);
    gru_wr_ = store.create_gaussian("slotcore/gru/wr", ds, ds, rng, xavier(ds));
    gru_ur_ = store.create_gaussian("slotcore/gru/ur", ds, ds, rng, xavier(ds));
    gru_br_ = store.create_zeros("slotcore/gru/br", 1, ds);
    gru_wn_ = store.create_gaussian("slotcore/gru/wn", ds, ds, rng, xavier(ds));
    gru_un_ = store.create_gaussian("slotcore/gru/un", ds, ds, rng, xavier(ds));
    gru_bnx_ = store.create_zeros("slotcore/gru/bnx", 1, ds);
    gru_bnh_ = store.create_zeros("slotcore/gru/bnh", 1, ds);

    norm_mlp_g_ = store.create_full("slotcore/norm_mlp/g", 1, ds, 1.0);
    norm_mlp_b_ = store.create_zeros("slotcore/norm_mlp/b", 1, ds);
    mlp_w1_ = store.create_gaussian("slotcore/mlp/w1", ds, hid, rng, xavier(ds));
    mlp_b1_ = store.create_zeros("slotcore/mlp/b1", 1, hid);
    mlp_w2_ = store.create_gaussian("slotcore/mlp/w2", hid, ds, rng,
                                    xavier(hid));
    mlp_b2_ = store.create_zeros("slotcore/mlp/b2", 1, ds);

    // Conditioned slots start indistinguishable from Gaussian ones: the
    // noun projection initializes near zero and the learned offset at the
    // shared mean, so conditioning nudges rather than displaces.
    init_mu_ = store.create_gaussian("slotcore/init/mu", 1, ds, rng, 0.5);
    init_log_sigma_ = store.create_zeros("slotcore/init/log_sigma", 1, ds);
    cond_proj_ = store.create_gaussian("slotcore/init/cond_proj", dt, ds, rng,
                                       0.1 * xavier(dt));
    cond_bias_ = store.create("slotcore/init/cond_bias", 1, ds,
                              init_mu_.val());

    dec_pos_ = store.create_gaussian("slotcore/dec/pos", cfg_.n_patches, ds,
                                     rng, 0.02);
    const std::size_t dh = cfg_.decoder_hidden;
    std::size_t in_dim = ds;
    for (std::size_t l = 0; l + 1 < cfg_.decoder_layers; ++l) {
        dec_w_.push_back(store.create_gaussian(
            "slotcore/dec/w" + std::to_string(l), in_dim, dh, rng,
            xavier(in_dim)));
        dec_b_.push_back(
            store.create_zeros("slotcore/dec/b" + std::to_string(l), 1, dh));
        in_dim = dh;
    }
    dec_w_.push_back(store.create_gaussian("slotcore/dec/w_out", in_dim,
                                           df + 1, rng, xavier(in_dim)));
    dec_b_.push_back(store.create_zeros("slotcore/dec/b_out", 1, df + 1));
}

SlotInit SlotCore::init_slots(const features::PromptBundle& bundle,
                              RngState& rng) const {
    const std::size_t k = cfg_.n_slots;
    const std::size_t m =
        std::min<std::size_t>(bundle.nouns.size(), cfg_.n_conditioned);

    SlotInit out;
    out.conditioned.assign(k, false);
    out.truncated_nouns = bundle.nouns.size() - m;

    // One shared noise draw per slot keeps conditioned and unconditioned
    // slots statistically alike; conditioning adds a learned displacement.
    std::vector<Var> rows;
    if (m > 0) {
        Mat emb(m, cfg_.text_dim);
        for (std::size_t i = 0; i < m; ++i) {
            const auto& v = bundle.noun_embeddings[i].vector;
            if (v.size() != cfg_.text_dim)
                throw std::invalid_argument(
                    "init_slots: text embedding dim mismatch");
            std::copy(v.begin(), v.end(), emb.row(i));
            out.conditioned[i] = true;
        }
        Var cond = core::add_rowvec(
            core::matmul(Var::constant(std::move(emb)), cond_proj_),
            cond_bias_);
        Mat noise = Mat::gaussian(m, cfg_.slot_dim, rng, 1.0);
        rows.push_back(core::add(
            cond, core::mul_rowvec(Var::constant(std::move(noise)),
                                   core::exp_(init_log_sigma_))));
    }
    if (m < k) {
        Mat noise = Mat::gaussian(k - m, cfg_.slot_dim, rng, 1.0);
        Var scaled = core::mul_rowvec(Var::constant(std::move(noise)),
                                      core::exp_(init_log_sigma_));
        rows.push_back(core::add_rowvec(scaled, init_mu_));
    }
    out.slots = rows.size() == 1 ? rows[0] : core::concat_rows(rows);
    return out;
}

Var SlotCore::gru(const Var& x, const Var& h) const {
    using namespace core;
    Var z = sigmoid_(add_rowvec(add(matmul(x, gru_wz_), matmul(h, gru_uz_)),
                                gru_bz_));
    Var r = sigmoid_(add_rowvec(add(matmul(x, gru_wr_), matmul(h, gru_ur_)),
                                gru_br_));
    Var hn = add_rowvec(matmul(h, gru_un_), gru_bnh_);
    Var n = tanh_(add(add_rowvec(matmul(x, gru_wn_), gru_bnx_), mul(r, hn)));
    // h' = n + z * (h - n)
    return add(n, mul(z, sub(h, n)));
}

SlotSet SlotCore::attend(const Var& features, const SlotInit& init) const {
    using namespace core;
    if (features.cols() != cfg_.feature_dim)
        throw std::invalid_argument("slot_attention: feature dim " +
                                    std::to_string(features.cols()) +
                                    " does not match projections");
    const double scale = 1.0 / std::sqrt(double(cfg_.slot_dim));

    Var x = layer_norm_rows(features, norm_in_g_, norm_in_b_);
    Var keys = matmul(x, wk_);
    Var values = matmul(x, wv_);

    Var slots = init.slots;
    Var attn;
    const std::size_t iters = std::max<std::size_t>(cfg_.n_iters, 1);
    for (std::size_t it = 0; it < iters; ++it) {
        Var q = matmul(layer_norm_rows(slots, norm_slots_g_, norm_slots_b_),
                       wq_);
        Var logits = mul_scalar(matmul(q, keys, false, true), scale);
        attn = softmax_cols(logits);  // normalize over slots per patch
        if (cfg_.n_iters == 0) break;  // masks from the init slots only

        Var weights =
            div_colvec(attn, add_scalar(row_sums(attn), cfg_.epsilon));
        Var updates = matmul(weights, values);
        slots = gru(updates, slots);
        slots = add(slots, add_rowvec(matmul(relu(add_rowvec(
                               matmul(layer_norm_rows(slots, norm_mlp_g_,
                                                      norm_mlp_b_),
                                      mlp_w1_),
                               mlp_b1_)),
                                             mlp_w2_),
                                      mlp_b2_));
        if (!slots.val().all_finite())
            throw std::runtime_error(
                "slot_attention: non-finite slots at iteration " +
                std::to_string(it));
    }

    SlotSet out;
    out.slots = slots;
    out.attn_masks = attn;
    out.conditioned = init.conditioned;
    return out;
}

Reconstruction SlotCore::decode(const Var& slots) const {
    using namespace core;
    if (slots.cols() != cfg_.slot_dim)
        throw std::invalid_argument("decode_slots: slot dim mismatch");
    const std::size_t k = slots.rows();
    const std::size_t n = cfg_.n_patches;
    const std::size_t df = cfg_.feature_dim;

    const Var ones = Var::constant(Mat(n, 1, 1.0));
    std::vector<Var> blocks;
    blocks.reserve(k);
    for (std::size_t s = 0; s < k; ++s)
        blocks.push_back(
            add(matmul(ones, slice_rows(slots, s, s + 1)), dec_pos_));
    Var h = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);  // (K*N)xDs

    for (std::size_t l = 0; l + 1 < dec_w_.size(); ++l)
        h = relu(add_rowvec(matmul(h, dec_w_[l]), dec_b_[l]));
    Var out = add_rowvec(matmul(h, dec_w_.back()), dec_b_.back());

    Var feats = slice_cols(out, 0, df);               // (K*N) x D_f
    Var alpha_logits = reshape(slice_cols(out, df, df + 1), k, n);
    Var alpha = softmax_cols(alpha_logits);           // per patch over slots

    Reconstruction rec;
    rec.alpha_masks = alpha;
    rec.features_hat = mixture_blend(alpha, feats);
    if (!rec.features_hat.val().all_finite())
        throw std::runtime_error("decode_slots: non-finite reconstruction");
    return rec;
}

Mat masks_to_grid(const Mat& masks, std::size_t grid_h, std::size_t grid_w,
                  std::size_t out_h, std::size_t out_w) {
    if (grid_h * grid_w != masks.cols)
        throw std::invalid_argument("masks_to_grid: grid " +
                                    std::to_string(grid_h) + "x" +
                                    std::to_string(grid_w) +
                                    " does not cover N=" +
                                    std::to_string(masks.cols));
    if (out_h == 0 || out_w == 0)
        throw std::invalid_argument("masks_to_grid: empty output");
    Mat out(masks.rows, out_h * out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const std::size_t sy =
            std::min(grid_h - 1, oy * grid_h / out_h);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::size_t sx = std::min(grid_w - 1, ox * grid_w / out_w);
            const std::size_t src = sy * grid_w + sx;
            const std::size_t dst = oy * out_w + ox;
            for (std::size_t s = 0; s < masks.rows; ++s)
                out.at(s, dst) = masks.at(s, src);
        }
    }
    return out;
}

}  // namespace storm::slotcore
