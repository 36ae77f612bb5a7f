#include "storm/metrics/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "storm/core/archive.hpp"
#include "storm/core/image.hpp"

namespace storm::metrics {

namespace {

double comb2(double n) { return n * (n - 1.0) * 0.5; }

}  // namespace

double fg_ari(const Segmentation& pred, const Segmentation& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("fg_ari: segmentation size mismatch");

    std::map<int, std::size_t> gt_index, pred_index;
    std::vector<std::pair<std::size_t, std::size_t>> pixels;
    pixels.reserve(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.labels[i] == gt.ignore_label) continue;
        auto [git, gnew] = gt_index.emplace(gt.labels[i], gt_index.size());
        auto [pit, pnew] = pred_index.emplace(pred.labels[i], pred_index.size());
        pixels.emplace_back(git->second, pit->second);
    }
    if (pixels.empty())
        throw std::invalid_argument("fg_ari: ground truth has no foreground");

    const std::size_t r = gt_index.size();
    const std::size_t c = pred_index.size();
    std::vector<double> table(r * c, 0.0);
    for (const auto& [gi, pi] : pixels) table[gi * c + pi] += 1.0;

    std::vector<double> a(r, 0.0), b(c, 0.0);
    double sum_nij = 0.0;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double nij = table[i * c + j];
            a[i] += nij;
            b[j] += nij;
            sum_nij += comb2(nij);
        }
    double sum_a = 0.0, sum_b = 0.0;
    for (double x : a) sum_a += comb2(x);
    for (double x : b) sum_b += comb2(x);

    const double total = comb2(double(pixels.size()));
    const double expected = sum_a * sum_b / total;
    const double maximum = 0.5 * (sum_a + sum_b);
    const double denom = maximum - expected;
    if (denom == 0.0) return 1.0;  // both partitions trivial and identical
    return (sum_nij - expected) / denom;
}

double iou(const std::vector<std::uint8_t>& a,
           const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("iou: mask size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool xa = a[i] != 0, xb = b[i] != 0;
        inter += std::size_t(xa && xb);
        uni += std::size_t(xa || xb);
    }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

double mbo(const MaskStack& pred_masks, const MaskStack& gt_masks,
           const std::vector<int>& class_ids) {
    if (gt_masks.empty())
        throw std::invalid_argument("mbo: empty ground-truth mask set");
    if (!class_ids.empty() && class_ids.size() != gt_masks.size())
        throw std::invalid_argument("mbo: class id count mismatch");

    MaskStack targets;
    if (class_ids.empty()) {
        targets = gt_masks;
    } else {
        std::map<int, std::vector<std::uint8_t>> unions;
        for (std::size_t g = 0; g < gt_masks.size(); ++g) {
            auto& u = unions[class_ids[g]];
            if (u.empty()) u.assign(gt_masks[g].size(), 0);
            for (std::size_t i = 0; i < u.size(); ++i)
                u[i] = u[i] || gt_masks[g][i];
        }
        for (auto& [cls, m] : unions) targets.push_back(std::move(m));
    }

    double acc = 0.0;
    for (const auto& gt : targets) {
        double best = 0.0;
        for (const auto& pr : pred_masks) best = std::max(best, iou(pr, gt));
        acc += best;
    }
    return acc / double(targets.size());
}

MaskStack hard_masks_from_slots(const core::Mat& soft_masks) {
    const std::size_t k = soft_masks.rows;
    const std::size_t n = soft_masks.cols;
    MaskStack out(k, std::vector<std::uint8_t>(n, 0));
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = 0;
        double best_v = soft_masks.at(0, j);
        for (std::size_t i = 1; i < k; ++i)
            if (soft_masks.at(i, j) > best_v) {
                best_v = soft_masks.at(i, j);
                best = i;
            }
        out[best][j] = 1;
    }
    return out;
}

Segmentation segmentation_from_hard_masks(const MaskStack& masks,
                                          std::size_t height,
                                          std::size_t width) {
    Segmentation seg(height, width, -1);
    for (std::size_t k = 0; k < masks.size(); ++k)
        for (std::size_t i = 0; i < masks[k].size(); ++i)
            if (masks[k][i]) seg.labels[i] = int(k);
    return seg;
}

std::pair<MaskStack, std::vector<int>> masks_from_segmentation(
    const Segmentation& seg) {
    std::map<int, std::vector<std::uint8_t>> by_label;
    for (std::size_t i = 0; i < seg.size(); ++i) {
        const int l = seg.labels[i];
        if (l == seg.ignore_label) continue;
        auto& m = by_label[l];
        if (m.empty()) m.assign(seg.size(), 0);
        m[i] = 1;
    }
    MaskStack masks;
    std::vector<int> labels;
    for (auto& [l, m] : by_label) {
        labels.push_back(l);
        masks.push_back(std::move(m));
    }
    return {std::move(masks), std::move(labels)};
}

SlotUsageStats slot_usage_stats(const core::Mat& masks, double eps) {
    const std::size_t k = masks.rows;
    SlotUsageStats st;
    st.mass.resize(k, 0.0);
    st.usage.resize(k, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < masks.cols; ++j)
            st.mass[i] += masks.at(i, j);
        total += st.mass[i];
    }
    for (std::size_t i = 0; i < k; ++i) st.usage[i] = st.mass[i] / (total + eps);
    if (k <= 1) {
        st.entropy = 0.0;
        return st;
    }
    double h = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        h -= st.usage[i] * std::log(st.usage[i] + eps);
    st.entropy = h / std::log(double(k));
    return st;
}

void MetricReport::add(double ari, double mi, double mc) {
    fg_ari.push_back(ari);
    mbo_i.push_back(mi);
    mbo_c.push_back(mc);
}

void MetricReport::finalize() {
    auto mean = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return v.empty() ? 0.0 : acc / double(v.size());
    };
    mean_fg_ari = mean(fg_ari);
    mean_mbo_i = mean(mbo_i);
    mean_mbo_c = mean(mbo_c);
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["mean"] = {{"fg_ari", mean_fg_ari},
                 {"mbo_i", mean_mbo_i},
                 {"mbo_c", mean_mbo_c}};
    j["per_image"] = nlohmann::json::array();
    for (std::size_t i = 0; i < fg_ari.size(); ++i)
        j["per_image"].push_back(
            {{"fg_ari", fg_ari[i]}, {"mbo_i", mbo_i[i]}, {"mbo_c", mbo_c[i]}});
    return j.dump(2);
}

void write_label_grid(const Segmentation& seg, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("label grid: cannot open " + path);
    core::write_u32(os, std::uint32_t(seg.height));
    core::write_u32(os, std::uint32_t(seg.width));
    core::write_u32(os, std::uint32_t(seg.ignore_label));
    for (int l : seg.labels) core::write_u32(os, std::uint32_t(l));
}

Segmentation read_label_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("label grid: cannot open " + path);
    const std::size_t h = core::read_u32(is);
    const std::size_t w = core::read_u32(is);
    Segmentation seg(h, w, int(core::read_u32(is)));
    for (std::size_t i = 0; i < seg.size(); ++i)
        seg.labels[i] = int(core::read_u32(is));
    if (!is) throw std::runtime_error("label grid: truncated " + path);
    return seg;
}

void write_label_png(const Segmentation& seg, const std::string& path) {
    std::vector<std::uint8_t> bytes(seg.size());
    for (std::size_t i = 0; i < seg.size(); ++i) {
        const int l = seg.labels[i];
        if (l < 0 || l > 255)
            throw std::invalid_argument(
                "label png: label out of byte range, use the raw grid format");
        bytes[i] = std::uint8_t(l);
    }
    core::write_png_gray(bytes, seg.height, seg.width, path);
}

Segmentation read_label_png(const std::string& path, int ignore_label) {
    std::size_t h = 0, w = 0;
    const std::vector<std::uint8_t> bytes = core::read_png_gray(path, h, w);
    Segmentation seg(h, w, ignore_label);
    for (std::size_t i = 0; i < seg.size(); ++i) seg.labels[i] = bytes[i];
    return seg;
}

}  // namespace storm::metrics
