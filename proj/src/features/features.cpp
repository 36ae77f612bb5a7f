#include "storm/features/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "storm/core/archive.hpp"
#include "storm/core/rng.hpp"

namespace storm::features {

using core::Image;
using core::Mat;
using core::RngState;
using core::Var;

void FeatureMap::validate() const {
    if (patches.rows < 1 || patches.cols < 1)
        throw std::invalid_argument("FeatureMap: empty patch matrix");
    if (grid_h * grid_w != patches.rows)
        throw std::invalid_argument("FeatureMap: grid " +
                                    std::to_string(grid_h) + "x" +
                                    std::to_string(grid_w) +
                                    " does not cover N=" +
                                    std::to_string(patches.rows));
    if (!patches.all_finite())
        throw std::invalid_argument("FeatureMap: non-finite entries");
}

namespace {

constexpr std::size_t kCodeDim = 10;

// Patch descriptor: mean color plus smooth positional code.
void patch_code(const Image& img, std::size_t patch, std::size_t gy,
                std::size_t gx, std::size_t grid_h, std::size_t grid_w,
                double* out) {
    double r = 0.0, g = 0.0, b = 0.0;
    for (std::size_t y = gy * patch; y < (gy + 1) * patch; ++y)
        for (std::size_t x = gx * patch; x < (gx + 1) * patch; ++x) {
            const std::uint8_t* p = img.px(y, x);
            r += p[0];
            g += p[1];
            b += p[2];
        }
    const double inv = 1.0 / (255.0 * double(patch * patch));
    const double px = (double(gx) + 0.5) / double(grid_w);
    const double py = (double(gy) + 0.5) / double(grid_h);
    const double tau = 6.283185307179586;
    // Color carries most of the energy; the positional code is a weak cue,
    // mirroring content-dominated backbone features.
    out[0] = 2.0 * r * inv;
    out[1] = 2.0 * g * inv;
    out[2] = 2.0 * b * inv;
    out[3] = 0.25 * px;
    out[4] = 0.25 * py;
    out[5] = 0.25 * std::sin(tau * px);
    out[6] = 0.25 * std::cos(tau * px);
    out[7] = 0.25 * std::sin(tau * py);
    out[8] = 0.25 * std::cos(tau * py);
    out[9] = 0.5;
}

void check_divisible(const Image& img, std::size_t patch,
                     const std::string& backend) {
    if (patch == 0 || img.height % patch != 0 || img.width % patch != 0)
        throw std::invalid_argument(
            backend + ": image " + std::to_string(img.height) + "x" +
            std::to_string(img.width) + " not divisible by patch size " +
            std::to_string(patch));
}

double quantize_f32(double x) { return double(float(x)); }

void quantize_mat(Mat& m) {
    for (double& x : m.v) x = quantize_f32(x);
}

}  // namespace

SyntheticBackend::SyntheticBackend(std::uint64_t seed, std::size_t patch,
                                   std::size_t dim)
    : patch_(patch), dim_(dim) {
    RngState rng(RngState::mix(seed, 0x53594e5448ull));
    proj_ = Mat::gaussian(dim, kCodeDim, rng, 0.5);
    quantize_mat(proj_);
    id_ = "synthetic/" + std::to_string(seed);
}

FeatureMap SyntheticBackend::encode(const Image& image) const {
    check_divisible(image, patch_, "synthetic");
    const std::size_t grid_h = image.height / patch_;
    const std::size_t grid_w = image.width / patch_;
    FeatureMap fm;
    fm.grid_h = grid_h;
    fm.grid_w = grid_w;
    fm.source_id = id_;
    fm.patches = Mat(grid_h * grid_w, dim_);
    double code[kCodeDim];
    for (std::size_t gy = 0; gy < grid_h; ++gy)
        for (std::size_t gx = 0; gx < grid_w; ++gx) {
            patch_code(image, patch_, gy, gx, grid_h, grid_w, code);
            double* row = fm.patches.row(gy * grid_w + gx);
            for (std::size_t d = 0; d < dim_; ++d) {
                double acc = 0.0;
                for (std::size_t c = 0; c < kCodeDim; ++c)
                    acc += proj_.at(d, c) * code[c];
                row[d] = quantize_f32(acc);
            }
        }
    return fm;
}

ToyConvBackend::ToyConvBackend(std::uint64_t seed, std::size_t dim,
                               std::size_t hidden)
    : dim_(dim), hidden_(hidden) {
    RngState rng(RngState::mix(seed, 0x544f59ull));
    params_.create_gaussian("backbone/conv1/w", hidden_, 3 * 4 * 4, rng,
                            1.0 / std::sqrt(3.0 * 16.0));
    params_.create_zeros("backbone/conv1/b", hidden_, 1);
    params_.create_gaussian("backbone/conv2/w", dim_, hidden_ * 2 * 2, rng,
                            1.0 / std::sqrt(double(hidden_) * 4.0));
    params_.create_zeros("backbone/conv2/b", dim_, 1);
    id_ = "toy-encoder/" + std::to_string(seed);
}

Var ToyConvBackend::encode_var(const Image& image) const {
    check_divisible(image, 8, "toy-encoder");
    Mat img(3, image.height * image.width);
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            const std::uint8_t* p = image.px(y, x);
            const std::size_t i = y * image.width + x;
            img.at(0, i) = p[0] / 255.0;
            img.at(1, i) = p[1] / 255.0;
            img.at(2, i) = p[2] / 255.0;
        }
    const std::size_t h1 = image.height / 4, w1 = image.width / 4;
    Var x = Var::constant(std::move(img));
    Var c1 = core::im2col(x, image.height, image.width, 4, 4, 4, 0);
    Var a1 = relu(core::add_colvec(
        core::matmul(params_.get("backbone/conv1/w"), c1),
        params_.get("backbone/conv1/b")));
    Var c2 = core::im2col(a1, h1, w1, 2, 2, 2, 0);
    Var a2 = core::add_colvec(
        core::matmul(params_.get("backbone/conv2/w"), c2),
        params_.get("backbone/conv2/b"));
    // channels x (grid_h*grid_w) -> patches (N x D_f)
    return core::transpose(a2);
}

FeatureMap ToyConvBackend::encode(const Image& image) const {
    core::NoGradGuard ng;
    Var out = encode_var(image);
    FeatureMap fm;
    fm.grid_h = image.height / 8;
    fm.grid_w = image.width / 8;
    fm.source_id = id_;
    fm.patches = out.val();
    quantize_mat(fm.patches);
    return fm;
}

FileBackend::FileBackend(const std::string& path) {
    std::vector<FeatureRecord> recs = read_features(path);
    if (recs.empty()) throw std::runtime_error("file backend: empty " + path);
    dim_ = recs[0].map.dim();
    id_ = "file/" + path;
    records_.reserve(recs.size());
    for (FeatureRecord& r : recs)
        records_.emplace_back(r.image_id, std::move(r.map));
    std::sort(records_.begin(), records_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
}

FeatureMap FileBackend::encode(const Image&) const {
    throw std::runtime_error(
        "file backend serves precomputed features; use lookup(image_id)");
}

bool FileBackend::has(std::uint64_t image_id) const {
    auto it = std::lower_bound(
        records_.begin(), records_.end(), image_id,
        [](const auto& r, std::uint64_t id) { return r.first < id; });
    return it != records_.end() && it->first == image_id;
}

FeatureMap FileBackend::lookup(std::uint64_t image_id) const {
    auto it = std::lower_bound(
        records_.begin(), records_.end(), image_id,
        [](const auto& r, std::uint64_t id) { return r.first < id; });
    if (it == records_.end() || it->first != image_id)
        throw std::out_of_range("file backend: no features for image id " +
                                std::to_string(image_id));
    return it->second;
}

std::unique_ptr<FeatureBackend> make_backend(const BackendConfig& cfg) {
    if (cfg.kind == "synthetic")
        return std::make_unique<SyntheticBackend>(cfg.seed, cfg.patch, cfg.dim);
    if (cfg.kind == "toy-encoder")
        return std::make_unique<ToyConvBackend>(cfg.seed, cfg.dim);
    if (cfg.kind == "file") return std::make_unique<FileBackend>(cfg.path);
    throw std::invalid_argument("unknown feature backend: " + cfg.kind);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(char(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

TextEmbedder::TextEmbedder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {}

TextEmbedding TextEmbedder::embed(const std::string& text) const {
    const std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty())
        throw std::invalid_argument("embed_text: empty string");
    std::vector<double> acc(dim_, 0.0);
    for (const std::string& tok : tokens) {
        RngState rng(RngState::mix(core::fnv1a(tok), seed_));
        for (std::size_t d = 0; d < dim_; ++d) acc[d] += rng.normal();
    }
    double norm = 0.0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : acc) x /= norm;
    TextEmbedding e;
    e.vector = std::move(acc);
    e.token_text = text;
    return e;
}

std::vector<std::string> extract_nouns(const std::string& sentence,
                                       const std::set<std::string>& lexicon) {
    if (lexicon.empty())
        throw std::invalid_argument("extract_nouns: empty lexicon");
    std::vector<std::string> out;
    for (const std::string& tok : tokenize(sentence)) {
        if (!lexicon.count(tok)) continue;
        if (std::find(out.begin(), out.end(), tok) == out.end())
            out.push_back(tok);
    }
    return out;
}

PromptBundle make_prompt_bundle(const std::string& sentence,
                                const std::set<std::string>& lexicon,
                                const TextEmbedder& embedder) {
    PromptBundle b;
    b.sentence = sentence;
    b.nouns = extract_nouns(sentence, lexicon);
    b.noun_embeddings.reserve(b.nouns.size());
    for (const std::string& n : b.nouns)
        b.noun_embeddings.push_back(embedder.embed(n));
    return b;
}

std::set<std::string> load_lexicon(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("lexicon: cannot open " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        const std::vector<std::string> toks = tokenize(line);
        for (const std::string& t : toks) out.insert(t);
    }
    return out;
}

void save_lexicon(const std::set<std::string>& lexicon,
                  const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("lexicon: cannot open " + path);
    for (const std::string& w : lexicon) os << w << "\n";
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kFeatureMagic[8] = {'S', 'T', 'O', 'R', 'M', 'F', 'T', 'R'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;
}  // namespace

std::size_t write_features(const std::string& path,
                           const std::vector<FeatureRecord>& records) {
    if (records.empty())
        throw std::invalid_argument("write_features: no records");
    const std::size_t n = records[0].map.n_patches();
    const std::size_t d = records[0].map.dim();
    const std::size_t gh = records[0].map.grid_h;
    const std::size_t gw = records[0].map.grid_w;
    for (const FeatureRecord& r : records)
        if (r.map.n_patches() != n || r.map.dim() != d ||
            r.map.grid_h != gh || r.map.grid_w != gw)
            throw std::invalid_argument(
                "write_features: records disagree on N/D_f/grid");

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_features: cannot open " + path);
    os.write(kFeatureMagic, 8);
    core::write_u32(os, kFeatureVersion);
    core::write_u32(os, std::uint32_t(records.size()));
    core::write_u32(os, std::uint32_t(n));
    core::write_u32(os, std::uint32_t(d));
    core::write_u32(os, std::uint32_t(gh));
    core::write_u32(os, std::uint32_t(gw));
    core::write_u32(os, kDtypeF32);
    for (const FeatureRecord& r : records) {
        core::write_u64(os, r.image_id);
        for (double x : r.map.patches.v) core::write_f32(os, float(x));
    }
    if (!os) throw std::runtime_error("write_features: write failed " + path);
    return records.size();
}

std::vector<FeatureRecord> read_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_features: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kFeatureMagic, 8) != 0)
        throw std::runtime_error("read_features: bad magic in " + path);
    const std::uint32_t version = core::read_u32(is);
    if (version != kFeatureVersion)
        throw std::runtime_error("read_features: unsupported version " +
                                 std::to_string(version));
    const std::uint32_t count = core::read_u32(is);
    const std::uint32_t n = core::read_u32(is);
    const std::uint32_t d = core::read_u32(is);
    const std::uint32_t gh = core::read_u32(is);
    const std::uint32_t gw = core::read_u32(is);
    const std::uint32_t dtype = core::read_u32(is);
    if (dtype != kDtypeF32)
        throw std::runtime_error("read_features: unsupported dtype code " +
                                 std::to_string(dtype));
    if (std::size_t(gh) * gw != n)
        throw std::runtime_error("read_features: grid does not cover N");

    const std::uintmax_t expected =
        8 + 6 * 4 + 4 +
        std::uintmax_t(count) * (8 + std::uintmax_t(n) * d * 4);
    const std::uintmax_t actual = std::filesystem::file_size(path);
    if (actual != expected)
        throw std::runtime_error(
            "read_features: payload size " + std::to_string(actual) +
            " does not match header-declared " + std::to_string(expected));

    std::vector<FeatureRecord> out(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        out[i].image_id = core::read_u64(is);
        out[i].map.grid_h = gh;
        out[i].map.grid_w = gw;
        out[i].map.source_id = "file";
        out[i].map.patches = Mat(n, d);
        for (double& x : out[i].map.patches.v)
            x = double(core::read_f32(is));
        out[i].map.validate();
    }
    return out;
}

}  // namespace storm::features
