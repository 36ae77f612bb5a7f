#include "storm/spriteworld/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "storm/core/archive.hpp"
#include "storm/core/base64.hpp"

namespace storm::spriteworld {

using core::Image;
using core::RngState;

std::string shape_name(Shape s) {
    switch (s) {
        case Shape::Circle: return "circle";
        case Shape::Square: return "square";
        case Shape::Triangle: return "triangle";
        case Shape::Diamond: return "diamond";
        case Shape::Cross: return "cross";
    }
    return "?";
}

const std::vector<ColorDef>& training_palette() {
    static const std::vector<ColorDef> p = {
        {"red", 220, 50, 47},
        {"green", 64, 176, 72},
        {"blue", 56, 116, 230},
        {"yellow", 236, 201, 34},
    };
    return p;
}

const std::vector<ColorDef>& heldout_palette() {
    static const std::vector<ColorDef> p = {
        {"magenta", 211, 54, 130},
        {"cyan", 42, 161, 152},
        {"orange", 235, 122, 32},
        {"purple", 130, 82, 200},
    };
    return p;
}

const ColorDef& color_by_name(const std::string& name) {
    for (const ColorDef& c : training_palette())
        if (c.name == name) return c;
    for (const ColorDef& c : heldout_palette())
        if (c.name == name) return c;
    throw std::invalid_argument("unknown color: " + name);
}

void SceneSpec::validate() const {
    if (objects.empty() || objects.size() > 4)
        throw std::invalid_argument("SceneSpec: need 1..4 task objects");
    if (target_index >= objects.size())
        throw std::invalid_argument("SceneSpec: target index out of range");
    for (std::size_t i = 0; i < objects.size(); ++i)
        for (std::size_t j = i + 1; j < objects.size(); ++j) {
            const double dx = objects[i].x - objects[j].x;
            const double dy = objects[i].y - objects[j].y;
            if (std::sqrt(dx * dx + dy * dy) <
                objects[i].size + objects[j].size)
                throw std::invalid_argument(
                    "SceneSpec: task objects overlap at spawn");
        }
}

// ---------------------------------------------------------------------------
// rasterization

namespace {

constexpr std::uint8_t kBg = 30;
constexpr double kGoalOuter = 0.06;
constexpr double kGoalInner = 0.042;
constexpr double kGripperRadius = 0.03;

bool inside_shape(Shape s, double dx, double dy, double r) {
    switch (s) {
        case Shape::Circle:
            return dx * dx + dy * dy <= r * r;
        case Shape::Square: {
            const double h = r * 0.7071067811865476;
            return std::fabs(dx) <= h && std::fabs(dy) <= h;
        }
        case Shape::Triangle: {
            // equilateral, apex up, circumradius r
            const double ax = 0.0, ay = -r;
            const double bx = -0.8660254037844386 * r, by = 0.5 * r;
            const double cx = 0.8660254037844386 * r, cy = 0.5 * r;
            auto side = [&](double x1, double y1, double x2, double y2) {
                return (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1);
            };
            const double s1 = side(ax, ay, bx, by);
            const double s2 = side(bx, by, cx, cy);
            const double s3 = side(cx, cy, ax, ay);
            return (s1 >= 0 && s2 >= 0 && s3 >= 0) ||
                   (s1 <= 0 && s2 <= 0 && s3 <= 0);
        }
        case Shape::Diamond:
            return std::fabs(dx) + std::fabs(dy) <= r;
        case Shape::Cross: {
            const double arm = r / 3.0;
            return (std::fabs(dx) <= arm && std::fabs(dy) <= r) ||
                   (std::fabs(dy) <= arm && std::fabs(dx) <= r);
        }
    }
    return false;
}

struct Painter {
    Image img{kImageSize, kImageSize};
    metrics::Segmentation seg{kImageSize, kImageSize, 0};

    Painter() {
        std::fill(img.rgb.begin(), img.rgb.end(), kBg);
    }

    void paint_sprite(Shape shape, double cx, double cy, double r,
                      const ColorDef& c, int label) {
        const double n = double(kImageSize);
        const int x0 = std::max(0, int(std::floor((cx - r) * n)) - 1);
        const int x1 = std::min(int(kImageSize) - 1,
                                int(std::ceil((cx + r) * n)) + 1);
        const int y0 = std::max(0, int(std::floor((cy - r) * n)) - 1);
        const int y1 = std::min(int(kImageSize) - 1,
                                int(std::ceil((cy + r) * n)) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double px = (x + 0.5) / n;
                const double py = (y + 0.5) / n;
                if (!inside_shape(shape, px - cx, py - cy, r)) continue;
                img.set(std::size_t(y), std::size_t(x), c.r, c.g, c.b);
                seg.labels[std::size_t(y) * kImageSize + std::size_t(x)] =
                    label;
            }
    }

    void paint_ring(double cx, double cy, double router, double rinner,
                    const ColorDef& c, int label) {
        const double n = double(kImageSize);
        const int x0 = std::max(0, int(std::floor((cx - router) * n)) - 1);
        const int x1 = std::min(int(kImageSize) - 1,
                                int(std::ceil((cx + router) * n)) + 1);
        const int y0 = std::max(0, int(std::floor((cy - router) * n)) - 1);
        const int y1 = std::min(int(kImageSize) - 1,
                                int(std::ceil((cy + router) * n)) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double px = (x + 0.5) / n;
                const double py = (y + 0.5) / n;
                const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                if (d2 > router * router || d2 < rinner * rinner) continue;
                img.set(std::size_t(y), std::size_t(x), c.r, c.g, c.b);
                seg.labels[std::size_t(y) * kImageSize + std::size_t(x)] =
                    label;
            }
    }
};

}  // namespace

RenderResult render_scene(const SceneSpec& spec,
                          const std::vector<std::array<double, 2>>* object_pos,
                          const std::array<double, 2>* agent_pos) {
    Painter p;
    std::vector<int> class_ids;  // class per instance label 1..G

    auto pos_of = [&](std::size_t i, const SpriteSpec& s) {
        if (object_pos) return (*object_pos)[i];
        return std::array<double, 2>{s.x, s.y};
    };

    int next_label = 1;
    // Goal ring first so entities occlude it.
    int goal_label = 0;
    if (spec.has_goal) {
        goal_label = next_label++;
        class_ids.push_back(kClassGoal);
    }
    std::vector<int> distractor_labels, object_labels;
    for (const SpriteSpec& d : spec.distractors) {
        distractor_labels.push_back(next_label++);
        class_ids.push_back(int(d.shape));
    }
    for (const SpriteSpec& o : spec.objects) {
        object_labels.push_back(next_label++);
        class_ids.push_back(int(o.shape));
    }
    int gripper_label = 0;
    if (spec.has_agent) {
        gripper_label = next_label++;
        class_ids.push_back(kClassGripper);
    }

    if (spec.has_goal)
        p.paint_ring(spec.goal_x, spec.goal_y, kGoalOuter, kGoalInner,
                     {"goal", 170, 170, 170}, goal_label);
    for (std::size_t i = 0; i < spec.distractors.size(); ++i) {
        const SpriteSpec& d = spec.distractors[i];
        const auto pos = pos_of(spec.objects.size() + i, d);
        p.paint_sprite(d.shape, pos[0], pos[1], d.size, color_by_name(d.color),
                       distractor_labels[i]);
    }
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
        const SpriteSpec& o = spec.objects[i];
        const auto pos = pos_of(i, o);
        p.paint_sprite(o.shape, pos[0], pos[1], o.size, color_by_name(o.color),
                       object_labels[i]);
    }
    if (spec.has_agent) {
        const std::array<double, 2> ap =
            agent_pos ? *agent_pos
                      : std::array<double, 2>{spec.agent_x, spec.agent_y};
        p.paint_sprite(Shape::Circle, ap[0], ap[1], kGripperRadius,
                       {"gripper", 250, 250, 250}, gripper_label);
    }

    RenderResult out;
    out.image = std::move(p.img);
    out.gt_instances = std::move(p.seg);
    out.instance_class_ids = std::move(class_ids);
    out.object_labels = std::move(object_labels);
    out.goal_label = goal_label;
    out.gripper_label = gripper_label;
    return out;
}

// ---------------------------------------------------------------------------
// dynamics

Env::Env(SceneSpec spec, int horizon, std::string instruction)
    : spec_(std::move(spec)), instruction_(std::move(instruction)),
      horizon_(horizon) {
    spec_.validate();
    if (horizon_ < 1 || horizon_ > kMaxEpisodeLen)
        throw std::invalid_argument("Env: horizon out of range");
    reset();
}

void Env::reset() {
    positions_.clear();
    for (const SpriteSpec& o : spec_.objects) positions_.push_back({o.x, o.y});
    for (const SpriteSpec& d : spec_.distractors)
        positions_.push_back({d.x, d.y});
    agent_x_ = spec_.agent_x;
    agent_y_ = spec_.agent_y;
    grip_ = 0.0;
    t_ = 0;
    success_ = false;
    check_success();
}

Observation Env::observe() const {
    const std::array<double, 2> ap{agent_x_, agent_y_};
    RenderResult r = render_scene(spec_, &positions_, &ap);
    Observation obs;
    obs.image = std::move(r.image);
    obs.gt_instances = std::move(r.gt_instances);
    obs.instance_class_ids = std::move(r.instance_class_ids);
    obs.object_labels = std::move(r.object_labels);
    obs.goal_label = r.goal_label;
    obs.proprio = {agent_x_, agent_y_, grip_};
    obs.instruction = instruction_;
    return obs;
}

Observation Env::step(const Action& a) {
    const double dx = std::clamp(a.dx, -kMaxStep, kMaxStep);
    const double dy = std::clamp(a.dy, -kMaxStep, kMaxStep);
    const bool grip_on = a.grip >= 0.5;

    // Pre-move proximity decides what the gripper carries.
    int grabbed = -1;
    if (grip_on) {
        double best = kGrabRadius;
        for (std::size_t i = 0; i < positions_.size(); ++i) {
            const double ddx = positions_[i][0] - agent_x_;
            const double ddy = positions_[i][1] - agent_y_;
            const double d = std::sqrt(ddx * ddx + ddy * ddy);
            if (d <= best) {
                best = d;
                grabbed = int(i);
            }
        }
    }

    const double nx = std::clamp(agent_x_ + dx, 0.0, 1.0);
    const double ny = std::clamp(agent_y_ + dy, 0.0, 1.0);
    const double eff_dx = nx - agent_x_;
    const double eff_dy = ny - agent_y_;
    agent_x_ = nx;
    agent_y_ = ny;
    if (grabbed >= 0) {
        positions_[grabbed][0] =
            std::clamp(positions_[grabbed][0] + eff_dx, 0.0, 1.0);
        positions_[grabbed][1] =
            std::clamp(positions_[grabbed][1] + eff_dy, 0.0, 1.0);
    }
    grip_ = grip_on ? 1.0 : 0.0;
    ++t_;
    check_success();
    return observe();
}

void Env::check_success() {
    if (success_) return;
    if (spec_.task == "push" && spec_.has_goal) {
        const auto& obj = positions_[spec_.target_index];
        const double dx = obj[0] - spec_.goal_x;
        const double dy = obj[1] - spec_.goal_y;
        success_ = std::sqrt(dx * dx + dy * dy) <= kSuccessRadius;
    } else if (spec_.task == "reach") {
        const auto& obj = positions_[spec_.target_index];
        const double dx = obj[0] - agent_x_;
        const double dy = obj[1] - agent_y_;
        success_ = std::sqrt(dx * dx + dy * dy) <= kSuccessRadius;
    }
}

// ---------------------------------------------------------------------------
// scene sampling

namespace {

constexpr double kMargin = 0.17;

struct Obstacle {
    double x, y, r;
};

bool placeable(double x, double y, double r,
               const std::vector<Obstacle>& obstacles) {
    for (const Obstacle& o : obstacles) {
        const double dx = x - o.x, dy = y - o.y;
        if (std::sqrt(dx * dx + dy * dy) < r + o.r) return false;
    }
    return true;
}

std::array<double, 2> place(RngState& rng, double r,
                            std::vector<Obstacle>& obstacles, double margin,
                            const std::string& what, std::uint64_t seed) {
    for (int tries = 0; tries < 100; ++tries) {
        const double x = rng.uniform(margin, 1.0 - margin);
        const double y = rng.uniform(margin, 1.0 - margin);
        if (placeable(x, y, r, obstacles)) {
            obstacles.push_back({x, y, r});
            return {x, y};
        }
    }
    throw std::runtime_error("spriteworld: unsatisfiable placement for " +
                             what + " after 100 rejection samples (seed " +
                             std::to_string(seed) + ")");
}

std::vector<ColorDef> shuffled_palette(const std::vector<ColorDef>& pal,
                                       RngState& rng) {
    std::vector<ColorDef> p = pal;
    for (std::size_t i = p.size(); i > 1; --i)
        std::swap(p[i - 1], p[rng.uniform_int(i)]);
    return p;
}

Shape random_base_shape(RngState& rng) {
    return Shape(rng.uniform_int(3));
}

}  // namespace

GeneratedScene generate_scene(const std::string& task, int difficulty,
                              std::uint64_t seed) {
    if (task != "push" && task != "reach")
        throw std::invalid_argument("generate_scene: unknown task " + task);
    RngState rng(RngState::mix(seed, core::fnv1a(task)));

    std::size_t n_obj = 1;
    if (difficulty >= 1) n_obj += 1;
    if (difficulty >= 2) n_obj += rng.uniform_int(2);
    n_obj = std::min<std::size_t>(n_obj, 3);

    SceneSpec spec;
    spec.seed = seed;
    spec.task = task;
    std::vector<Obstacle> obstacles;
    const std::vector<ColorDef> colors = shuffled_palette(training_palette(), rng);
    for (std::size_t i = 0; i < n_obj; ++i) {
        SpriteSpec s;
        s.shape = random_base_shape(rng);
        s.color = colors[i].name;
        s.size = rng.uniform(0.10, 0.15);
        const auto pos = place(rng, s.size, obstacles, kMargin, "object", seed);
        s.x = pos[0];
        s.y = pos[1];
        spec.objects.push_back(s);
    }
    spec.target_index = rng.uniform_int(n_obj);

    if (difficulty >= 1) {
        const std::size_t max_d = std::min(difficulty, 2);
        const std::size_t n_d = rng.uniform_int(max_d + 1);
        std::vector<std::string> used;
        for (const SpriteSpec& o : spec.objects) used.push_back(o.color);
        std::vector<ColorDef> avail;
        for (const ColorDef& c : training_palette())
            if (std::find(used.begin(), used.end(), c.name) == used.end())
                avail.push_back(c);
        for (std::size_t i = 0; i < n_d && !avail.empty(); ++i) {
            SpriteSpec d;
            d.shape = random_base_shape(rng);
            d.color = avail[rng.uniform_int(avail.size())].name;
            d.size = rng.uniform(0.08, 0.12);
            const auto pos = place(rng, d.size, obstacles, 0.08, "distractor",
                                   seed);
            d.x = pos[0];
            d.y = pos[1];
            spec.distractors.push_back(d);
        }
    }

    spec.has_agent = true;
    {
        const auto pos = place(rng, kGrabRadius, obstacles, kMargin, "agent",
                               seed);
        spec.agent_x = pos[0];
        spec.agent_y = pos[1];
    }

    if (task == "push") {
        spec.has_goal = true;
        const SpriteSpec& tgt = spec.objects[spec.target_index];
        for (int tries = 0;; ++tries) {
            if (tries >= 100)
                throw std::runtime_error(
                    "generate_scene: unsatisfiable goal placement (seed " +
                    std::to_string(seed) + ")");
            const double gx = rng.uniform(kMargin, 1.0 - kMargin);
            const double gy = rng.uniform(kMargin, 1.0 - kMargin);
            const double dx = gx - tgt.x, dy = gy - tgt.y;
            if (std::sqrt(dx * dx + dy * dy) < 0.25) continue;
            if (!placeable(gx, gy, kGoalOuter, obstacles)) continue;
            spec.goal_x = gx;
            spec.goal_y = gy;
            obstacles.push_back({gx, gy, kGoalOuter});
            break;
        }
    }

    const SpriteSpec& tgt = spec.objects[spec.target_index];
    GeneratedScene out;
    out.spec = std::move(spec);
    if (task == "push")
        out.instruction = "push the " + tgt.color + " " +
                          shape_name(tgt.shape) + " to the goal";
    else
        out.instruction = "reach the " + tgt.color + " " + shape_name(tgt.shape);
    return out;
}

Action scripted_expert(const Env& env) {
    const SceneSpec& spec = env.spec();
    const auto agent = env.agent();
    const auto obj = env.object_position(spec.target_index);
    const double step_len = kMaxStep * 0.9;

    auto toward = [&](double tx, double ty, double fx, double fy) {
        return Action{std::clamp(tx - fx, -step_len, step_len),
                      std::clamp(ty - fy, -step_len, step_len), 0.0};
    };

    if (spec.task == "reach") {
        if (env.success()) return {0.0, 0.0, 0.0};
        return toward(obj[0], obj[1], agent[0], agent[1]);
    }

    // push
    const double gdx = obj[0] - spec.goal_x;
    const double gdy = obj[1] - spec.goal_y;
    if (std::sqrt(gdx * gdx + gdy * gdy) <= kSuccessRadius - 0.005)
        return {0.0, 0.0, 0.0};  // at goal: release and hold still

    const double adx = obj[0] - agent[0];
    const double ady = obj[1] - agent[1];
    if (std::sqrt(adx * adx + ady * ady) <= kGrabRadius * 0.6) {
        Action a = toward(spec.goal_x, spec.goal_y, obj[0], obj[1]);
        a.grip = 1.0;
        return a;
    }
    return toward(obj[0], obj[1], agent[0], agent[1]);
}

SceneSpec inject_distractors(const SceneSpec& spec, const std::string& mode,
                             std::size_t count, std::uint64_t seed) {
    if (mode != "ID" && mode != "ND")
        throw std::invalid_argument("inject_distractors: mode must be ID|ND");
    SceneSpec out = spec;
    if (count == 0) return out;

    RngState rng(RngState::mix(seed, mode == "ND" ? 0x4e44ull : 0x4944ull));
    std::vector<Obstacle> obstacles;
    for (const SpriteSpec& o : out.objects)
        obstacles.push_back({o.x, o.y, o.size});
    for (const SpriteSpec& d : out.distractors)
        obstacles.push_back({d.x, d.y, d.size});
    if (out.has_goal)
        obstacles.push_back({out.goal_x, out.goal_y, kGoalOuter});
    if (out.has_agent)
        obstacles.push_back({out.agent_x, out.agent_y, kGrabRadius});

    std::vector<ColorDef> palette;
    if (mode == "ND") {
        palette = heldout_palette();
    } else {
        std::vector<std::string> used;
        for (const SpriteSpec& o : out.objects) used.push_back(o.color);
        for (const ColorDef& c : training_palette())
            if (std::find(used.begin(), used.end(), c.name) == used.end())
                palette.push_back(c);
        if (palette.empty())
            throw std::runtime_error(
                "inject_distractors: no unused training colors left");
    }

    for (std::size_t i = 0; i < count; ++i) {
        SpriteSpec d;
        d.shape = mode == "ND" ? Shape(3 + rng.uniform_int(2))
                               : random_base_shape(rng);
        d.color = palette[rng.uniform_int(palette.size())].name;
        d.size = rng.uniform(0.08, 0.12);
        const auto pos = place(rng, d.size, obstacles, 0.07, "distractor",
                               seed);
        d.x = pos[0];
        d.y = pos[1];
        out.distractors.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// pretraining data

std::set<std::string> default_lexicon() {
    std::set<std::string> lex;
    for (const ColorDef& c : training_palette()) lex.insert(c.name);
    lex.insert("goal");
    return lex;
}

std::vector<PretrainSample> build_pretrain_set(std::size_t n_images,
                                               std::uint64_t seed,
                                               const PretrainOptions& opts) {
    std::vector<PretrainSample> out;
    out.reserve(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
        RngState rng(RngState::mix(seed, 0x505245ull + i));
        SceneSpec spec;
        spec.seed = RngState::mix(seed, i);
        spec.task = "";
        const bool with_goal = rng.uniform() < opts.goal_prob;
        const bool with_agent = rng.uniform() < opts.agent_prob;
        std::size_t max_obj = std::min<std::size_t>(opts.max_objects, 4);
        if (with_goal) max_obj = std::min<std::size_t>(max_obj, 3);
        const std::size_t n_obj = 1 + rng.uniform_int(max_obj);

        std::vector<Obstacle> obstacles;
        const std::vector<ColorDef> colors =
            shuffled_palette(training_palette(), rng);
        for (std::size_t k = 0; k < n_obj; ++k) {
            SpriteSpec s;
            s.shape = random_base_shape(rng);
            s.color = colors[k].name;
            s.size = rng.uniform(0.10, 0.15);
            const auto pos = place(rng, s.size, obstacles, kMargin, "object",
                                   spec.seed);
            s.x = pos[0];
            s.y = pos[1];
            spec.objects.push_back(s);
        }
        if (with_goal) {
            const auto pos = place(rng, kGoalOuter, obstacles, kMargin, "goal",
                                   spec.seed);
            spec.has_goal = true;
            spec.goal_x = pos[0];
            spec.goal_y = pos[1];
        }
        if (with_agent) {
            const auto pos = place(rng, kGripperRadius + 0.02, obstacles,
                                   kMargin, "agent", spec.seed);
            spec.has_agent = true;
            spec.agent_x = pos[0];
            spec.agent_y = pos[1];
        }

        std::string caption = "a scene with";
        for (std::size_t k = 0; k < spec.objects.size(); ++k) {
            caption += (k == 0 ? " a " : " and a ") + spec.objects[k].color +
                       " " + shape_name(spec.objects[k].shape);
        }
        if (with_goal) caption += " and a goal";
        out.push_back({std::move(spec), std::move(caption)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

void write_sprite(std::ostream& os, const SpriteSpec& s) {
    core::write_u8(os, std::uint8_t(s.shape));
    core::write_str(os, s.color);
    core::write_f64(os, s.x);
    core::write_f64(os, s.y);
    core::write_f64(os, s.size);
}

SpriteSpec read_sprite(std::istream& is) {
    SpriteSpec s;
    s.shape = Shape(core::read_u8(is));
    s.color = core::read_str(is);
    s.x = core::read_f64(is);
    s.y = core::read_f64(is);
    s.size = core::read_f64(is);
    return s;
}

void write_scene(std::ostream& os, const SceneSpec& s) {
    core::write_u8(os, std::uint8_t(s.objects.size()));
    for (const SpriteSpec& o : s.objects) write_sprite(os, o);
    core::write_u8(os, std::uint8_t(s.distractors.size()));
    for (const SpriteSpec& d : s.distractors) write_sprite(os, d);
    core::write_u32(os, std::uint32_t(s.target_index));
    core::write_u8(os, std::uint8_t((s.has_agent ? 1 : 0) |
                                    (s.has_goal ? 2 : 0)));
    core::write_f64(os, s.agent_x);
    core::write_f64(os, s.agent_y);
    core::write_f64(os, s.goal_x);
    core::write_f64(os, s.goal_y);
    core::write_u64(os, s.seed);
    core::write_str(os, s.task);
}

SceneSpec read_scene(std::istream& is) {
    SceneSpec s;
    const std::size_t n_obj = core::read_u8(is);
    for (std::size_t i = 0; i < n_obj; ++i) s.objects.push_back(read_sprite(is));
    const std::size_t n_d = core::read_u8(is);
    for (std::size_t i = 0; i < n_d; ++i)
        s.distractors.push_back(read_sprite(is));
    s.target_index = core::read_u32(is);
    const std::uint8_t flags = core::read_u8(is);
    s.has_agent = flags & 1;
    s.has_goal = flags & 2;
    s.agent_x = core::read_f64(is);
    s.agent_y = core::read_f64(is);
    s.goal_x = core::read_f64(is);
    s.goal_y = core::read_f64(is);
    s.seed = core::read_u64(is);
    s.task = core::read_str(is);
    return s;
}

constexpr char kPretrainMagic[8] = {'S', 'T', 'O', 'R', 'M', 'P', 'R', 'E'};
constexpr char kDemoMagic[8] = {'S', 'T', 'O', 'R', 'M', 'T', 'R', 'J'};

nlohmann::json sprite_to_json(const SpriteSpec& s) {
    return {{"shape", shape_name(s.shape)},
            {"color", s.color},
            {"x", s.x},
            {"y", s.y},
            {"size", s.size}};
}

Shape shape_from_name(const std::string& n) {
    for (int i = 0; i < 5; ++i)
        if (shape_name(Shape(i)) == n) return Shape(i);
    throw std::invalid_argument("unknown shape: " + n);
}

SpriteSpec sprite_from_json(const nlohmann::json& j) {
    SpriteSpec s;
    s.shape = shape_from_name(j.at("shape").get<std::string>());
    s.color = j.at("color").get<std::string>();
    s.x = j.at("x").get<double>();
    s.y = j.at("y").get<double>();
    s.size = j.at("size").get<double>();
    return s;
}

nlohmann::json scene_to_json(const SceneSpec& s) {
    nlohmann::json j;
    j["objects"] = nlohmann::json::array();
    for (const SpriteSpec& o : s.objects) j["objects"].push_back(sprite_to_json(o));
    j["distractors"] = nlohmann::json::array();
    for (const SpriteSpec& d : s.distractors)
        j["distractors"].push_back(sprite_to_json(d));
    j["target_index"] = s.target_index;
    j["has_agent"] = s.has_agent;
    j["agent"] = {s.agent_x, s.agent_y};
    j["has_goal"] = s.has_goal;
    j["goal"] = {s.goal_x, s.goal_y};
    j["seed"] = s.seed;
    j["task"] = s.task;
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    for (const auto& o : j.at("objects")) s.objects.push_back(sprite_from_json(o));
    for (const auto& d : j.at("distractors"))
        s.distractors.push_back(sprite_from_json(d));
    s.target_index = j.at("target_index").get<std::size_t>();
    s.has_agent = j.at("has_agent").get<bool>();
    s.agent_x = j.at("agent")[0].get<double>();
    s.agent_y = j.at("agent")[1].get<double>();
    s.has_goal = j.at("has_goal").get<bool>();
    s.goal_x = j.at("goal")[0].get<double>();
    s.goal_y = j.at("goal")[1].get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.task = j.at("task").get<std::string>();
    return s;
}

}  // namespace

std::uint64_t pretrain_set_hash(const std::vector<PretrainSample>& set) {
    std::ostringstream os(std::ios::binary);
    for (const PretrainSample& s : set) {
        write_scene(os, s.spec);
        core::write_str(os, s.caption);
    }
    const std::string bytes = os.str();
    return core::fnv1a(bytes.data(), bytes.size());
}

void save_pretrain_set(const std::vector<PretrainSample>& set,
                       const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("pretrain set: cannot open " + path);
    os.write(kPretrainMagic, 8);
    core::write_u32(os, 1);
    core::write_u32(os, std::uint32_t(set.size()));
    for (const PretrainSample& s : set) {
        write_scene(os, s.spec);
        core::write_str(os, s.caption);
    }
}

std::vector<PretrainSample> load_pretrain_set(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("pretrain set: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kPretrainMagic, 8) != 0)
        throw std::runtime_error("pretrain set: bad magic in " + path);
    if (core::read_u32(is) != 1)
        throw std::runtime_error("pretrain set: unsupported version");
    const std::uint32_t n = core::read_u32(is);
    std::vector<PretrainSample> out(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        out[i].spec = read_scene(is);
        out[i].caption = core::read_str(is);
    }
    return out;
}

Trajectory run_expert_episode(const GeneratedScene& gs, int horizon) {
    Env env(gs.spec, horizon, gs.instruction);
    Trajectory traj;
    traj.scene = gs.spec;
    traj.instruction = gs.instruction;
    while (!env.done() && int(traj.actions.size()) < kMaxEpisodeLen) {
        const Action a = scripted_expert(env);
        traj.actions.push_back(a.as_array());
        env.step(a);
    }
    traj.success = env.success();
    return traj;
}

std::vector<Trajectory> collect_demos(const std::string& task, int difficulty,
                                      std::size_t n, std::uint64_t seed,
                                      int horizon) {
    std::vector<Trajectory> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const GeneratedScene gs =
            generate_scene(task, difficulty, RngState::mix(seed, i));
        out.push_back(run_expert_episode(gs, horizon));
    }
    return out;
}

std::vector<Observation> replay_observations(const Trajectory& traj) {
    Env env(traj.scene, kMaxEpisodeLen, traj.instruction);
    std::vector<Observation> out;
    out.reserve(traj.actions.size() + 1);
    out.push_back(env.observe());
    for (const auto& a : traj.actions)
        out.push_back(env.step(Action::from_array(a)));
    return out;
}

void save_demos(const std::vector<Trajectory>& demos,
                const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("demos: cannot open " + path);
    os.write(kDemoMagic, 8);
    core::write_u32(os, 1);
    core::write_u32(os, std::uint32_t(demos.size()));
    for (const Trajectory& t : demos) {
        write_scene(os, t.scene);
        core::write_str(os, t.instruction);
        core::write_u32(os, std::uint32_t(t.actions.size()));
        for (const auto& a : t.actions) {
            core::write_f64(os, a[0]);
            core::write_f64(os, a[1]);
            core::write_f64(os, a[2]);
        }
        core::write_u8(os, t.success ? 1 : 0);
    }
}

std::vector<Trajectory> load_demos(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("demos: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kDemoMagic, 8) != 0)
        throw std::runtime_error("demos: bad magic in " + path);
    if (core::read_u32(is) != 1)
        throw std::runtime_error("demos: unsupported version");
    const std::uint32_t n = core::read_u32(is);
    std::vector<Trajectory> out(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        out[i].scene = read_scene(is);
        out[i].instruction = core::read_str(is);
        const std::uint32_t steps = core::read_u32(is);
        out[i].actions.resize(steps);
        for (std::uint32_t s = 0; s < steps; ++s) {
            out[i].actions[s][0] = core::read_f64(is);
            out[i].actions[s][1] = core::read_f64(is);
            out[i].actions[s][2] = core::read_f64(is);
        }
        out[i].success = core::read_u8(is) != 0;
    }
    return out;
}

std::uint64_t demos_hash(const std::vector<Trajectory>& demos) {
    std::ostringstream os(std::ios::binary);
    for (const Trajectory& t : demos) {
        write_scene(os, t.scene);
        core::write_str(os, t.instruction);
        for (const auto& a : t.actions) {
            core::write_f64(os, a[0]);
            core::write_f64(os, a[1]);
            core::write_f64(os, a[2]);
        }
        core::write_u8(os, t.success ? 1 : 0);
    }
    const std::string bytes = os.str();
    return core::fnv1a(bytes.data(), bytes.size());
}

void export_demos_jsonl(const std::vector<Trajectory>& demos,
                        const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("demos jsonl: cannot open " + path);
    for (std::size_t i = 0; i < demos.size(); ++i) {
        const Trajectory& t = demos[i];
        nlohmann::json header;
        header["trajectory"] = i;
        header["instruction"] = t.instruction;
        header["success"] = t.success;
        header["n_steps"] = t.actions.size();
        header["scene"] = scene_to_json(t.scene);
        os << header.dump() << "\n";
        const std::vector<Observation> obs = replay_observations(t);
        for (std::size_t s = 0; s < t.actions.size(); ++s) {
            nlohmann::json step;
            step["t"] = s;
            step["action"] = t.actions[s];
            step["proprio"] = obs[s].proprio;
            step["frame_png"] = core::base64_encode(core::encode_png(obs[s].image));
            os << step.dump() << "\n";
        }
    }
}

std::vector<Trajectory> import_demos_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("demos jsonl: cannot open " + path);
    std::vector<Trajectory> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        if (j.contains("trajectory")) {
            Trajectory t;
            t.scene = scene_from_json(j.at("scene"));
            t.instruction = j.at("instruction").get<std::string>();
            t.success = j.at("success").get<bool>();
            out.push_back(std::move(t));
        } else if (!out.empty()) {
            out.back().actions.push_back(
                j.at("action").get<std::array<double, 3>>());
        }
    }
    return out;
}

}  // namespace storm::spriteworld
