// Deterministic 2-D sprite manipulation world: scene sampling, rasterization
// with exact per-pixel ground truth, point-gripper dynamics, a scripted
// expert, distractor injection for ID/ND splits, and dataset factories for
// both training phases.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "storm/core/image.hpp"
#include "storm/core/rng.hpp"
#include "storm/metrics/discovery.hpp"

namespace storm::spriteworld {

enum class Shape : std::uint8_t {
    Circle = 0,
    Square = 1,
    Triangle = 2,
    Diamond = 3,  // held-out (ND distractors only)
    Cross = 4,    // held-out (ND distractors only)
};

std::string shape_name(Shape s);

struct ColorDef {
    std::string name;
    std::uint8_t r, g, b;
};

// Training palette names the objects tasks can reference; the held-out
// palette exists only for new-distractor evaluation.
const std::vector<ColorDef>& training_palette();
const std::vector<ColorDef>& heldout_palette();
const ColorDef& color_by_name(const std::string& name);

struct SpriteSpec {
    Shape shape = Shape::Circle;
    std::string color;
    double x = 0.5, y = 0.5;  // center, normalized [0,1]^2
    double size = 0.08;       // radius, normalized
};

struct SceneSpec {
    std::vector<SpriteSpec> objects;      // 1..4 task objects
    std::vector<SpriteSpec> distractors;  // never referenced by instructions
    std::size_t target_index = 0;
    bool has_agent = false;
    double agent_x = 0.5, agent_y = 0.5;
    bool has_goal = false;
    double goal_x = 0.5, goal_y = 0.5;
    std::uint64_t seed = 0;
    std::string task;  // "reach" | "push" | "" (pretrain scene)

    void validate() const;
};

// Class ids used in ground-truth segmentations.
constexpr int kClassGoal = 8;
constexpr int kClassGripper = 9;

struct Observation {
    core::Image image;                     // 64x64 RGB
    std::array<double, 3> proprio{};       // gripper x, y, grip
    metrics::Segmentation gt_instances;    // 0 = background (ignored)
    std::vector<int> instance_class_ids;   // class per instance label 1..G
    std::vector<int> object_labels;        // instance label per task object
    int goal_label = 0;
    std::string instruction;
};

constexpr std::size_t kImageSize = 64;
constexpr double kMaxStep = 0.05;
constexpr double kGrabRadius = 0.08;
constexpr double kSuccessRadius = 0.05;
constexpr int kMaxEpisodeLen = 200;

// Rasterizes a scene at a given dynamic state. Agent/goal come from the
// spec; object positions are taken from `object_pos` when provided (same
// ordering: objects then distractors).
struct RenderResult {
    core::Image image;
    metrics::Segmentation gt_instances;
    std::vector<int> instance_class_ids;
    std::vector<int> object_labels;  // instance label per spec.objects entry
    int goal_label = 0;              // 0 when absent
    int gripper_label = 0;           // 0 when absent
};
RenderResult render_scene(const SceneSpec& spec,
                          const std::vector<std::array<double, 2>>* object_pos
                          = nullptr,
                          const std::array<double, 2>* agent_pos = nullptr);

struct Action {
    double dx = 0.0, dy = 0.0;
    double grip = 0.0;  // >= 0.5 engages
    std::array<double, 3> as_array() const { return {dx, dy, grip}; }
    static Action from_array(const std::array<double, 3>& a) {
        return {a[0], a[1], a[2]};
    }
};

class Env {
public:
    explicit Env(SceneSpec spec, int horizon = 100,
                 std::string instruction = "");

    Observation observe() const;
    // Applies one action (clipped to bounds) and returns the new observation.
    Observation step(const Action& a);
    void reset();

    bool success() const { return success_; }
    bool done() const { return success_ || t_ >= horizon_; }
    int t() const { return t_; }
    const SceneSpec& spec() const { return spec_; }
    std::array<double, 2> agent() const { return {agent_x_, agent_y_}; }
    std::array<double, 2> object_position(std::size_t i) const {
        return positions_[i];
    }
    double grip() const { return grip_; }

private:
    void check_success();

    SceneSpec spec_;
    std::string instruction_;
    std::vector<std::array<double, 2>> positions_;  // objects then distractors
    double agent_x_ = 0.5, agent_y_ = 0.5;
    double grip_ = 0.0;
    int t_ = 0;
    int horizon_ = 100;
    bool success_ = false;
};

// Deterministic scene sampling. Difficulty 0 is exactly one object and no
// distractors; higher difficulties add a second candidate object and ID
// distractors. Throws if non-overlap placement fails after 100 rejections.
struct GeneratedScene {
    SceneSpec spec;
    std::string instruction;
};
GeneratedScene generate_scene(const std::string& task, int difficulty,
                              std::uint64_t seed);

// Phase expert: approach, grab and carry, release. Pure function of state.
Action scripted_expert(const Env& env);

// Adds `count` distractors. ID mode draws from the training palette minus
// the colors already used by task objects; ND mode draws from the held-out
// palette and shapes. Task objects are untouched.
SceneSpec inject_distractors(const SceneSpec& spec, const std::string& mode,
                             std::size_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Stage-1 pretraining data: object scenes with enumerating captions whose
// lexicon words name each object by color (plus "goal" when present).

struct PretrainOptions {
    double goal_prob = 0.5;
    double agent_prob = 0.5;
    std::size_t max_objects = 4;
};

struct PretrainSample {
    SceneSpec spec;
    std::string caption;
};

std::vector<PretrainSample> build_pretrain_set(std::size_t n_images,
                                               std::uint64_t seed,
                                               const PretrainOptions& opts = {});

// Conditioning lexicon: color words plus "goal".
std::set<std::string> default_lexicon();

std::uint64_t pretrain_set_hash(const std::vector<PretrainSample>& set);

void save_pretrain_set(const std::vector<PretrainSample>& set,
                       const std::string& path);
std::vector<PretrainSample> load_pretrain_set(const std::string& path);

// ---------------------------------------------------------------------------
// Demonstrations. Files store the initial scene plus the action tape;
// observations are re-derived by deterministic replay.

struct Trajectory {
    SceneSpec scene;
    std::string instruction;
    std::vector<std::array<double, 3>> actions;
    bool success = false;

    std::size_t length() const { return actions.size(); }
};

Trajectory run_expert_episode(const GeneratedScene& gs, int horizon = 100);

std::vector<Trajectory> collect_demos(const std::string& task, int difficulty,
                                      std::size_t n, std::uint64_t seed,
                                      int horizon = 100);

// Observation before each action; one extra terminal observation at the end.
std::vector<Observation> replay_observations(const Trajectory& traj);

void save_demos(const std::vector<Trajectory>& demos, const std::string& path);
std::vector<Trajectory> load_demos(const std::string& path);
std::uint64_t demos_hash(const std::vector<Trajectory>& demos);

// Interchange export: one JSON object per line; header line then one line
// per step with the frame embedded as base64 PNG.
void export_demos_jsonl(const std::vector<Trajectory>& demos,
                        const std::string& path);
std::vector<Trajectory> import_demos_jsonl(const std::string& path);

}  // namespace storm::spriteworld
