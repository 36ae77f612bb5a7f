#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "storm/core/graph.hpp"
#include "storm/core/rng.hpp"

namespace storm::core {

// Named parameter registry. Names are hierarchical ("slotcore/attn/wq") so
// module groups can be selected by prefix for optimizers, freezing, hashing
// and checkpointing.
class ParamStore {
public:
    Var create(const std::string& name, std::size_t rows, std::size_t cols,
               Mat init);
    Var create_gaussian(const std::string& name, std::size_t rows,
                        std::size_t cols, RngState& rng, double stddev);
    Var create_zeros(const std::string& name, std::size_t rows,
                     std::size_t cols);
    Var create_full(const std::string& name, std::size_t rows,
                    std::size_t cols, double fill);

    bool contains(const std::string& name) const;
    Var get(const std::string& name) const;
    std::vector<std::string> names(const std::string& prefix = "") const;
    std::vector<Var> group(const std::string& prefix = "") const;
    std::size_t count_values(const std::string& prefix = "") const;

    // FNV hash over the raw bytes of every value under the prefix.
    std::uint64_t content_hash(const std::string& prefix = "") const;

    void zero_grads(const std::string& prefix = "");

    const std::map<std::string, Var>& all() const { return params_; }

private:
    std::map<std::string, Var> params_;
};

// Adam with decoupled weight decay and global-norm gradient clipping.
// Learning rate is supplied per step (schedules live in the trainer).
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
        double clip_norm = 1.0;  // <= 0 disables clipping
    };

    AdamW(std::vector<std::pair<std::string, Var>> params, Options opt);

    // Applies one update from the accumulated grads, then zeroes them.
    void step(double lr);

    double grad_global_norm() const;
    std::uint64_t steps_taken() const { return t_; }
    const Options& options() const { return opt_; }

    // Optimizer state exposed for checkpointing, keyed by parameter name.
    std::map<std::string, Mat> state_tensors() const;
    void load_state(const std::map<std::string, Mat>& state,
                    std::uint64_t steps);

private:
    struct Slot {
        std::string name;
        Var param;
        Mat m, v;
    };
    std::vector<Slot> slots_;
    Options opt_;
    std::uint64_t t_ = 0;
};

// Convenience: pairs (name, param) for every store entry under a prefix.
std::vector<std::pair<std::string, Var>> named_group(
    const ParamStore& store, const std::string& prefix);

}  // namespace storm::core
