// Object-discovery evaluation: foreground Adjusted Rand Index, mean best
// overlap (instance and class level), argmax mask binarization and slot
// usage diagnostics. Everything here is a pure function over integer grids
// and mask stacks.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/core/mat.hpp"

namespace storm::metrics {

struct Segmentation {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> labels;  // height*width, row-major
    int ignore_label = 0;

    Segmentation() = default;
    Segmentation(std::size_t h, std::size_t w, int ignore = 0)
        : height(h), width(w), labels(h * w, ignore), ignore_label(ignore) {}
    std::size_t size() const { return height * width; }
};

// Binary mask stack: k masks over height*width pixels.
using MaskStack = std::vector<std::vector<std::uint8_t>>;

// Adjusted Rand Index restricted to pixels where gt is not ignored; gt
// background never forms a cluster. Degenerate contingency (both partitions
// trivial) scores 1.
double fg_ari(const Segmentation& pred, const Segmentation& gt);

// Mean over ground-truth masks of the best IoU achieved by any predicted
// mask. class_ids (one per gt mask) unions instances per class before
// matching; pass empty for instance-level.
double mbo(const MaskStack& pred_masks, const MaskStack& gt_masks,
           const std::vector<int>& class_ids = {});

double iou(const std::vector<std::uint8_t>& a,
           const std::vector<std::uint8_t>& b);

// Per-pixel argmax over soft slot masks (rows = slots); ties break toward
// the lowest slot index.
MaskStack hard_masks_from_slots(const core::Mat& soft_masks);

Segmentation segmentation_from_hard_masks(const MaskStack& masks,
                                          std::size_t height,
                                          std::size_t width);

// Ground-truth masks from a segmentation; returns (masks, labels) pairs for
// every non-ignored label in ascending order.
std::pair<MaskStack, std::vector<int>> masks_from_segmentation(
    const Segmentation& seg);

struct SlotUsageStats {
    std::vector<double> mass;   // S_k: total mask weight per slot
    std::vector<double> usage;  // P_k: normalized usage
    double entropy = 0.0;       // H in [0,1], normalized by log K
};

SlotUsageStats slot_usage_stats(const core::Mat& masks, double eps = 1e-8);

struct MetricReport {
    std::vector<double> fg_ari;
    std::vector<double> mbo_i;
    std::vector<double> mbo_c;
    double mean_fg_ari = 0.0;
    double mean_mbo_i = 0.0;
    double mean_mbo_c = 0.0;

    void add(double ari, double mi, double mc);
    void finalize();
    std::string to_json() const;
};

// Raw integer label-map file: u32 height, u32 width, i32 ignore_label,
// i32 labels row-major, little-endian.
void write_label_grid(const Segmentation& seg, const std::string& path);
Segmentation read_label_grid(const std::string& path);

// 8-bit grayscale PNG label map (labels must fit a byte).
void write_label_png(const Segmentation& seg, const std::string& path);
Segmentation read_label_png(const std::string& path, int ignore_label);

}  // namespace storm::metrics
