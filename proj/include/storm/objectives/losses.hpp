// Training losses: feature reconstruction, mask-pooled contrastive semantic
// alignment, the entropy slot-usage penalty, their weighted sum, and the
// temporal slot-slot contrastive term used in the joint phase. All losses
// are graph ops, so gradients flow to whatever produced their inputs.
#pragma once

#include <string>
#include <vector>

#include "storm/core/graph.hpp"
#include "storm/core/optim.hpp"

namespace storm::objectives {

struct LossWeights {
    double recons = 1.0;
    double sem = 1.0;
    double pen = 1.0;
    double temporal = 1.0;
};

struct LossReport {
    double recons = 0.0;
    double sem = 0.0;
    double pen = 0.0;
    double temporal = 0.0;
    double total = 0.0;
    LossWeights weights;

    std::string to_json() const;
};

// Mean squared error over all N*D_f entries; set frobenius to take the raw
// norm instead.
core::Var recons_loss(const core::Var& target, const core::Var& recon,
                      bool frobenius = false);

// Row i = sum_n masks[i,n]*dense[n,:] / (sum_n masks[i,n] + eps), then
// unit-normalized. Rows whose mask mass is zero come back as zero vectors
// and are flagged.
core::Var mask_pool(const core::Var& masks, const core::Var& dense_feats,
                    double eps = 1e-8,
                    std::vector<bool>* zero_rows = nullptr);

// InfoNCE: for each pooled row i, -log softmax over candidate texts at the
// matching index. match.size() == pooled rows; all indices < candidate rows.
core::Var semantic_loss(const core::Var& candidates, const core::Var& pooled,
                        const std::vector<std::size_t>& match, double tau);

// 1 - mean normalized entropy of per-slot usage over the batch. masks holds
// one K x N matrix per sample. K = 1 is defined as 0.
core::Var entropy_penalty(const std::vector<core::Var>& masks,
                          double eps = 1e-8);

// Index-matched symmetric InfoNCE between row-normalized slot sets of
// consecutive frames; K = 1 is defined as 0.
core::Var temporal_slot_loss(const core::Var& slots_t,
                             const core::Var& slots_next, double tau);

// total = ((w_r*recons + w_s*sem) + w_p*pen) + w_t*temporal, in that order.
// Throws if any component is non-finite, naming the term.
core::Var overall_loss(const core::Var& recons, const core::Var& sem,
                       const core::Var& pen, const core::Var& temporal,
                       const LossWeights& w, LossReport* report = nullptr);

// Learned linear stand-in for a dense text-aligned visual encoder, plus the
// contrastive temperature.
class SemanticProjection {
public:
    SemanticProjection(std::size_t feature_dim, std::size_t text_dim,
                       double tau, core::ParamStore& store,
                       core::RngState& rng);
    core::Var project(const core::Var& features) const;  // N x D_t
    double tau() const { return tau_; }

private:
    core::Var w_;
    double tau_;
};

}  // namespace storm::objectives
