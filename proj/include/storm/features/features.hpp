// Frozen patch-feature and text-embedding providers. Backends are
// interchangeable: a seeded synthetic projection (test default), a small
// convolutional encoder, and a reader of precomputed feature files. The rest
// of the system only sees FeatureMap / TextEmbedding values.
#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "storm/core/graph.hpp"
#include "storm/core/image.hpp"
#include "storm/core/mat.hpp"
#include "storm/core/optim.hpp"

namespace storm::features {

struct FeatureMap {
    core::Mat patches;  // N x D_f
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::string source_id;

    std::size_t n_patches() const { return patches.rows; }
    std::size_t dim() const { return patches.cols; }
    void validate() const;
};

struct TextEmbedding {
    std::vector<double> vector;
    std::string token_text;
};

struct PromptBundle {
    std::string sentence;
    std::vector<std::string> nouns;
    std::vector<TextEmbedding> noun_embeddings;
};

class FeatureBackend {
public:
    virtual ~FeatureBackend() = default;
    virtual FeatureMap encode(const core::Image& image) const = 0;
    virtual std::size_t patch_size() const = 0;
    virtual std::size_t feature_dim() const = 0;
    virtual const std::string& id() const = 0;
};

// Fixed random projection of per-patch mean color plus a positional code.
// Deterministic in (image, seed); outputs are float32-representable so
// feature files round-trip bit-exactly.
class SyntheticBackend : public FeatureBackend {
public:
    SyntheticBackend(std::uint64_t seed, std::size_t patch = 8,
                     std::size_t dim = 32);
    FeatureMap encode(const core::Image& image) const override;
    std::size_t patch_size() const override { return patch_; }
    std::size_t feature_dim() const override { return dim_; }
    const std::string& id() const override { return id_; }

private:
    std::size_t patch_;
    std::size_t dim_;
    core::Mat proj_;  // dim x kCodeDim
    std::string id_;
};

// Two-layer strided convolutional encoder (total stride 8). Frozen by
// default; when unfrozen, encode_var exposes a differentiable path and the
// parameters join an optimizer group.
class ToyConvBackend : public FeatureBackend {
public:
    ToyConvBackend(std::uint64_t seed, std::size_t dim = 32,
                   std::size_t hidden = 8);
    FeatureMap encode(const core::Image& image) const override;
    core::Var encode_var(const core::Image& image) const;
    std::size_t patch_size() const override { return 8; }
    std::size_t feature_dim() const override { return dim_; }
    const std::string& id() const override { return id_; }

    void set_frozen(bool f) { frozen_ = f; }
    bool frozen() const { return frozen_; }
    core::ParamStore& params() { return params_; }
    const core::ParamStore& params() const { return params_; }
    std::uint64_t param_hash() const { return params_.content_hash(); }

private:
    std::size_t dim_;
    std::size_t hidden_;
    bool frozen_ = true;
    core::ParamStore params_;
    std::string id_;
};

// Serves features recorded in a feature file, keyed by image id.
class FileBackend : public FeatureBackend {
public:
    explicit FileBackend(const std::string& path);
    FeatureMap encode(const core::Image&) const override;  // always throws
    FeatureMap lookup(std::uint64_t image_id) const;
    bool has(std::uint64_t image_id) const;
    std::size_t patch_size() const override { return patch_; }
    std::size_t feature_dim() const override { return dim_; }
    const std::string& id() const override { return id_; }

private:
    std::vector<std::pair<std::uint64_t, FeatureMap>> records_;
    std::size_t patch_ = 8;
    std::size_t dim_ = 0;
    std::string id_;
};

struct BackendConfig {
    std::string kind = "synthetic";  // synthetic | toy-encoder | file
    std::uint64_t seed = 0;
    std::size_t patch = 8;
    std::size_t dim = 32;
    std::string path;  // file backend
};

std::unique_ptr<FeatureBackend> make_backend(const BackendConfig& cfg);

// Hashed-token stub embedder: each token maps to a fixed seeded Gaussian
// vector; token vectors are averaged and the result unit-normalized.
class TextEmbedder {
public:
    explicit TextEmbedder(std::size_t dim = 32, std::uint64_t seed = 0);
    TextEmbedding embed(const std::string& text) const;
    std::size_t dim() const { return dim_; }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

// Lowercases, strips punctuation, and returns lexicon words in
// first-occurrence order, deduplicated.
std::vector<std::string> extract_nouns(const std::string& sentence,
                                       const std::set<std::string>& lexicon);

PromptBundle make_prompt_bundle(const std::string& sentence,
                                const std::set<std::string>& lexicon,
                                const TextEmbedder& embedder);

std::set<std::string> load_lexicon(const std::string& path);
void save_lexicon(const std::set<std::string>& lexicon,
                  const std::string& path);

// ---------------------------------------------------------------------------
// Feature file format: "STORMFTR" magic, u32 version, u32 count/N/D_f/
// grid_h/grid_w, u32 dtype (0 = float32 little-endian row-major), then
// `count` records of [u64 image_id, N*D_f float32].

struct FeatureRecord {
    std::uint64_t image_id = 0;
    FeatureMap map;
};

std::size_t write_features(const std::string& path,
                           const std::vector<FeatureRecord>& records);
std::vector<FeatureRecord> read_features(const std::string& path);

}  // namespace storm::features
