#include <doctest.h>

#include <cmath>
#include <vector>

#include "storm/slotcore/slotcore.hpp"
#include "test_util.hpp"

using namespace storm::slotcore;
using storm::core::Mat;
using storm::core::ParamStore;
using storm::core::RngState;
using storm::core::Var;
using storm::features::PromptBundle;
using storm::features::TextEmbedder;

namespace {

SlotAttentionConfig small_cfg(std::size_t k = 4, std::size_t ds = 8,
                              std::size_t df = 6, std::size_t n = 9) {
    SlotAttentionConfig cfg;
    cfg.n_slots = k;
    cfg.slot_dim = ds;
    cfg.feature_dim = df;
    cfg.text_dim = 5;
    cfg.n_patches = n;
    cfg.n_conditioned = std::min<std::size_t>(3, k);
    cfg.decoder_hidden = 8;
    cfg.decoder_layers = 2;
    return cfg;
}

PromptBundle bundle_with_nouns(std::size_t n, std::size_t dt) {
    TextEmbedder emb(dt, 0);
    PromptBundle b;
    const char* words[] = {"red", "green", "blue", "yellow", "goal"};
    for (std::size_t i = 0; i < n; ++i) {
        b.nouns.push_back(words[i]);
        b.noun_embeddings.push_back(emb.embed(words[i]));
        b.sentence += std::string(words[i]) + " ";
    }
    return b;
}

}  // namespace

TEST_CASE("slotcore: init flags, truncation, determinism") {
    ParamStore store;
    RngState rng(1);
    SlotAttentionConfig cfg = small_cfg(7, 8, 6, 9);
    cfg.n_conditioned = 3;
    SlotCore model(cfg, store, rng);

    RngState r1(5);
    const SlotInit none = model.init_slots(bundle_with_nouns(0, 5), r1);
    CHECK(none.slots.rows() == 7);
    for (bool f : none.conditioned) CHECK_FALSE(f);

    RngState r2(5);
    const SlotInit two = model.init_slots(bundle_with_nouns(2, 5), r2);
    const std::vector<bool> want{true, true, false, false, false, false, false};
    CHECK(two.conditioned == want);
    CHECK(two.truncated_nouns == 0);

    RngState r3(5);
    const SlotInit five = model.init_slots(bundle_with_nouns(5, 5), r3);
    CHECK(five.truncated_nouns == 2);
    std::size_t cond = 0;
    for (bool f : five.conditioned) cond += f;
    CHECK(cond == 3);

    RngState r4(5), r5(5);
    const SlotInit a = model.init_slots(bundle_with_nouns(2, 5), r4);
    const SlotInit b = model.init_slots(bundle_with_nouns(2, 5), r5);
    for (std::size_t i = 0; i < a.slots.val().size(); ++i)
        CHECK(a.slots.val().v[i] == b.slots.val().v[i]);
}

TEST_CASE("slotcore: K=1 gives exactly all-ones masks") {
    ParamStore store;
    RngState rng(2);
    SlotAttentionConfig cfg = small_cfg(1, 6, 4, 5);
    cfg.n_conditioned = 1;
    SlotCore model(cfg, store, rng);

    RngState r(3);
    const SlotInit init = model.init_slots({}, r);
    const Var feats = Var::constant(Mat::gaussian(5, 4, rng));
    const SlotSet out = model.attend(feats, init);
    for (double v : out.attn_masks.val().v) CHECK(v == 1.0);

    const Reconstruction rec = model.decode(out.slots);
    for (double v : rec.alpha_masks.val().v) CHECK(v == 1.0);
}

TEST_CASE("slotcore: masks are a per-patch simplex over slots") {
    ParamStore store;
    RngState rng(3);
    SlotCore model(small_cfg(), store, rng);
    RngState r(7);
    for (int trial = 0; trial < 20; ++trial) {
        const SlotInit init = model.init_slots({}, r);
        const Var feats = Var::constant(Mat::gaussian(9, 6, r));
        const SlotSet out = model.attend(feats, init);
        const Reconstruction rec = model.decode(out.slots);
        for (std::size_t n = 0; n < 9; ++n) {
            double sa = 0.0, sd = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                const double a = out.attn_masks.val().at(k, n);
                const double d = rec.alpha_masks.val().at(k, n);
                CHECK(a >= 0.0);
                CHECK(a <= 1.0);
                CHECK(d >= 0.0);
                CHECK(d <= 1.0);
                sa += a;
                sd += d;
            }
            CHECK(std::fabs(sa - 1.0) <= 1e-6);
            CHECK(std::fabs(sd - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("slotcore: permutation equivariance of attention") {
    ParamStore store;
    RngState rng(4);
    SlotCore model(small_cfg(4, 8, 6, 9), store, rng);
    RngState r(11);
    const Mat feats_m = Mat::gaussian(9, 6, r);
    const Mat init_m = Mat::gaussian(4, 8, r);
    const std::vector<std::size_t> perm{2, 0, 3, 1};

    Mat init_p(4, 8);
    for (std::size_t i = 0; i < 4; ++i)
        std::copy(init_m.row(perm[i]), init_m.row(perm[i]) + 8, init_p.row(i));

    SlotInit a{Var::constant(init_m), {false, false, false, false}, 0};
    SlotInit b{Var::constant(init_p), {false, false, false, false}, 0};
    const Var feats = Var::constant(feats_m);
    const SlotSet oa = model.attend(feats, a);
    const SlotSet ob = model.attend(feats, b);

    double worst = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            worst = std::max(worst,
                             std::fabs(ob.slots.val().at(i, j) -
                                       oa.slots.val().at(perm[i], j)));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t n = 0; n < 9; ++n)
            worst = std::max(worst,
                             std::fabs(ob.attn_masks.val().at(i, n) -
                                       oa.attn_masks.val().at(perm[i], n)));
    CHECK(worst <= 1e-5);
}

TEST_CASE("slotcore: one attention iteration matches a straight-line oracle") {
    // N=4, K=2, D_s=D_f=2, identity projections, default layer norms.
    ParamStore store;
    RngState rng(5);
    SlotAttentionConfig cfg = small_cfg(2, 2, 2, 4);
    cfg.n_iters = 1;
    cfg.n_conditioned = 1;
    SlotCore model(cfg, store, rng);
    auto set_identity = [&](const char* name) {
        Mat& w = store.get(name).mutable_val();
        for (std::size_t i = 0; i < w.rows; ++i)
            for (std::size_t j = 0; j < w.cols; ++j)
                w.at(i, j) = i == j ? 1.0 : 0.0;
    };
    set_identity("slotcore/attn/wk");
    set_identity("slotcore/attn/wv");
    set_identity("slotcore/attn/wq");

    const Mat feats{4, 2, {0.3, -1.2, 0.8, 0.4, -0.5, 0.9, 1.5, -0.2}};
    const Mat init{2, 2, {0.2, -0.4, -1.0, 0.7}};

    // Straight-line reference: layer norm, dot products, two-way softmax.
    auto ln_row = [](const double* x, std::size_t c, double* out) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x[j];
        mu /= double(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= double(c);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < c; ++j) out[j] = (x[j] - mu) * inv;
    };
    double xh[4][2], qh[2][2];
    for (int n = 0; n < 4; ++n) ln_row(feats.row(n), 2, xh[n]);
    for (int k = 0; k < 2; ++k) ln_row(init.row(k), 2, qh[k]);
    double expect[2][4];
    const double scale = 1.0 / std::sqrt(2.0);
    for (int n = 0; n < 4; ++n) {
        double l0 = scale * (qh[0][0] * xh[n][0] + qh[0][1] * xh[n][1]);
        double l1 = scale * (qh[1][0] * xh[n][0] + qh[1][1] * xh[n][1]);
        const double mx = std::max(l0, l1);
        const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        expect[0][n] = e0 / (e0 + e1);
        expect[1][n] = e1 / (e0 + e1);
    }

    SlotInit si{Var::constant(init), {false, false}, 0};
    const SlotSet out = model.attend(Var::constant(feats), si);
    for (int k = 0; k < 2; ++k)
        for (int n = 0; n < 4; ++n)
            CHECK(out.attn_masks.val().at(k, n) ==
                  doctest::Approx(expect[k][n]).epsilon(1e-10));
}

TEST_CASE("slotcore: tiny decoder matches a hand-rolled forward pass") {
    ParamStore store;
    RngState rng(6);
    SlotAttentionConfig cfg = small_cfg(2, 2, 1, 2);
    cfg.decoder_hidden = 2;
    cfg.decoder_layers = 2;
    cfg.n_conditioned = 1;
    SlotCore model(cfg, store, rng);

    store.get("slotcore/dec/pos").mutable_val() =
        Mat{2, 2, {0.1, -0.2, 0.05, 0.3}};
    store.get("slotcore/dec/w0").mutable_val() =
        Mat{2, 2, {0.5, -0.3, 0.2, 0.4}};
    store.get("slotcore/dec/b0").mutable_val() = Mat{1, 2, {0.01, -0.02}};
    store.get("slotcore/dec/w_out").mutable_val() =
        Mat{2, 2, {0.7, 0.1, -0.6, 0.25}};
    store.get("slotcore/dec/b_out").mutable_val() = Mat{1, 2, {0.0, 0.1}};

    const Mat slots{2, 2, {0.4, -0.1, -0.3, 0.8}};
    const Reconstruction rec = model.decode(Var::constant(slots));

    // Oracle: broadcast slot + position, one relu layer, linear head,
    // per-position softmax over slots, then blend.
    double feat[2][2], alpha_logit[2][2];
    const double pos[2][2] = {{0.1, -0.2}, {0.05, 0.3}};
    const double w0[2][2] = {{0.5, -0.3}, {0.2, 0.4}};
    const double b0[2] = {0.01, -0.02};
    const double wo[2][2] = {{0.7, 0.1}, {-0.6, 0.25}};
    const double bo[2] = {0.0, 0.1};
    for (int k = 0; k < 2; ++k)
        for (int n = 0; n < 2; ++n) {
            double in0 = slots.at(k, 0) + pos[n][0];
            double in1 = slots.at(k, 1) + pos[n][1];
            double h0 = std::max(0.0, in0 * w0[0][0] + in1 * w0[1][0] + b0[0]);
            double h1 = std::max(0.0, in0 * w0[0][1] + in1 * w0[1][1] + b0[1]);
            feat[k][n] = h0 * wo[0][0] + h1 * wo[1][0] + bo[0];
            alpha_logit[k][n] = h0 * wo[0][1] + h1 * wo[1][1] + bo[1];
        }
    for (int n = 0; n < 2; ++n) {
        const double mx = std::max(alpha_logit[0][n], alpha_logit[1][n]);
        const double e0 = std::exp(alpha_logit[0][n] - mx);
        const double e1 = std::exp(alpha_logit[1][n] - mx);
        const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        const double fhat = a0 * feat[0][n] + a1 * feat[1][n];
        CHECK(rec.alpha_masks.val().at(0, n) ==
              doctest::Approx(a0).epsilon(1e-12));
        CHECK(rec.features_hat.val().at(n, 0) ==
              doctest::Approx(fhat).epsilon(1e-12));
    }
}

TEST_CASE("slotcore: n_iters=0 returns init and decodes without NaN") {
    ParamStore store;
    RngState rng(7);
    SlotAttentionConfig cfg = small_cfg();
    cfg.n_iters = 0;
    SlotCore model(cfg, store, rng);
    RngState r(9);
    const SlotInit init = model.init_slots({}, r);
    const SlotSet out = model.attend(
        Var::constant(Mat::gaussian(9, 6, r)), init);
    for (std::size_t i = 0; i < init.slots.val().size(); ++i)
        CHECK(out.slots.val().v[i] == init.slots.val().v[i]);
    const Reconstruction rec = model.decode(out.slots);
    CHECK(rec.features_hat.val().all_finite());
    CHECK(out.attn_masks.val().all_finite());
}

TEST_CASE("slotcore: decode gradient w.r.t. init slots passes FD check") {
    ParamStore store;
    RngState rng(8);
    SlotAttentionConfig cfg = small_cfg(3, 4, 4, 4);
    cfg.n_iters = 2;
    SlotCore model(cfg, store, rng);
    RngState r(13);
    const Mat feats = Mat::gaussian(4, 4, r, 0.7);
    const Mat init = Mat::gaussian(3, 4, r, 0.7);

    const double err = storm::testutil::grad_check(
        [&](const std::vector<Var>& in) {
            SlotInit si{in[0], {false, false, false}, 0};
            const SlotSet s = model.attend(Var::constant(feats), si);
            return storm::core::mean_all(model.decode(s.slots).features_hat);
        },
        {init});
    CHECK(err <= 1e-4);
}

TEST_CASE("slotcore: masks_to_grid") {
    Mat m(2, 4);
    m.v = {0.9, 0.1, 0.4, 0.6, 0.1, 0.9, 0.6, 0.4};
    // identity
    const Mat same = masks_to_grid(m, 2, 2, 2, 2);
    CHECK(same.v == m.v);
    // 2x2 -> 4x4: each cell becomes a 2x2 block
    const Mat up = masks_to_grid(m, 2, 2, 4, 4);
    for (std::size_t oy = 0; oy < 4; ++oy)
        for (std::size_t ox = 0; ox < 4; ++ox) {
            const std::size_t src = (oy / 2) * 2 + (ox / 2);
            CHECK(up.at(0, oy * 4 + ox) == m.at(0, src));
        }
    // per-pixel simplex preserved
    for (std::size_t j = 0; j < 16; ++j)
        CHECK(up.at(0, j) + up.at(1, j) == doctest::Approx(1.0));
    CHECK_THROWS_AS(masks_to_grid(m, 3, 2, 4, 4), std::invalid_argument);
}
