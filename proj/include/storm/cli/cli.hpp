// Command-line surface: dataset generation, both training phases,
// discovery and policy evaluation, ablation sweeps, and mask-overlay
// visualization. Exit codes: 0 success, 2 configuration error, 3 runtime
// failure.
#pragma once

#include <string>
#include <vector>

#include "storm/core/image.hpp"
#include "storm/core/mat.hpp"

namespace storm::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // without argv[0]

// Slot-overlay rendering, exposed for tests: original blended with the
// slot's color by its soft mask, the noun caption drawn in a 5x7 pixel
// font when the slot is conditioned.
core::Image render_slot_overlay(const core::Image& original,
                                const core::Mat& masks, std::size_t grid_h,
                                std::size_t grid_w, std::size_t slot,
                                const std::string& caption);
core::Image render_argmax_panel(const core::Mat& masks, std::size_t grid_h,
                                std::size_t grid_w, std::size_t height,
                                std::size_t width);

}  // namespace storm::cli
