// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/toyworld.hpp"

#include "covar/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace covar::toy {

namespace {

constexpr int kMaxAttempts = 1000;

struct Anchor {
    const char* name; // words joined by spaces
    double x, y;
};

const Anchor kAnchors[] = {
    {"top left", -0.6, 0.6},
    {"top right", 0.6, 0.6},
    {"bottom left", -0.6, -0.6},
    {"bottom right", 0.6, -0.6},
    {"center", 0.0, 0.0},
};

const char* kColorNames[6] = {"red", "green", "blue", "yellow", "purple", "orange"};

double clampc(double v) { return std::clamp(v, -1.0, 1.0); }

double dist(double ax, double ay, double bx, double by) {
    return std::hypot(ax - bx, ay - by);
}

// Distance from point p to segment ab.
double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    if (len2 == 0.0)
        return dist(px, py, ax, ay);
    double t = ((px - ax) * vx + (py - ay) * vy) / len2;
    t = std::clamp(t, 0.0, 1.0);
    return dist(px, py, ax + t * vx, ay + t * vy);
}

} // namespace

const std::array<std::array<float, 3>, 6>& palette() {
    static const std::array<std::array<float, 3>, 6> p = {{
        {0.90f, 0.15f, 0.15f}, // red
        {0.15f, 0.80f, 0.20f}, // green
        {0.20f, 0.30f, 0.95f}, // blue
        {0.95f, 0.90f, 0.15f}, // yellow
        {0.65f, 0.20f, 0.85f}, // purple
        {0.95f, 0.55f, 0.10f}, // orange
    }};
    return p;
}

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> v = {
        "<pad>", "put", "push", "the", "in", "to", "top", "bottom", "left",
        "right", "center", "red", "green", "blue", "yellow", "purple",
        "orange", "square", "disc",
    };
    return v;
}

int vocab_size() { return static_cast<int>(vocabulary().size()); }

std::vector<std::int32_t> tokenize(const std::string& text) {
    const auto& vocab = vocabulary();
    std::vector<std::int32_t> out;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) {
        auto it = std::find(vocab.begin(), vocab.end(), word);
        if (it == vocab.end())
            throw std::runtime_error("tokenize: out-of-vocabulary word '" + word + "'");
        out.push_back(static_cast<std::int32_t>(it - vocab.begin()));
    }
    out.resize(kTokenLen, kPadToken);
    return out;
}

std::string detokenize(const std::vector<std::int32_t>& tokens) {
    const auto& vocab = vocabulary();
    std::string out;
    for (std::int32_t id : tokens) {
        if (id == kPadToken)
            continue;
        if (id < 0 || id >= static_cast<std::int32_t>(vocab.size()))
            throw std::runtime_error("detokenize: token id out of range");
        if (!out.empty())
            out += ' ';
        out += vocab[id];
    }
    return out;
}

SceneSpec sample_scene(std::uint64_t seed, Task family) {
    Rng rng = Rng(seed).derive(0x5ce4e);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        SceneSpec s;
        s.seed = seed;
        s.task = family;

        const int n = 2 + static_cast<int>(rng.below(3));

        // Distinct (shape, color) identities so instructions are unambiguous.
        std::array<int, 12> combos;
        for (int i = 0; i < 12; ++i)
            combos[i] = i;
        for (int i = 11; i > 0; --i)
            std::swap(combos[i], combos[rng.below(static_cast<std::uint64_t>(i + 1))]);

        bool ok = true;
        for (int i = 0; i < n; ++i) {
            SceneObject o;
            o.shape = (combos[i] % 2 == 0) ? ObjShape::Square : ObjShape::Disc;
            o.color = combos[i] / 2;
            o.x = rng.uniform(-0.8, 0.8);
            o.y = rng.uniform(-0.8, 0.8);
            for (const auto& prev : s.objects)
                if (dist(o.x, o.y, prev.x, prev.y) < 0.3)
                    ok = false;
            s.objects.push_back(o);
        }
        if (!ok)
            continue;

        s.target_index = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const auto& tgt = s.objects[s.target_index];

        const Anchor& anchor = kAnchors[rng.below(5)];
        s.goal_x = anchor.x;
        s.goal_y = anchor.y;
        if (dist(s.goal_x, s.goal_y, tgt.x, tgt.y) < 0.4)
            continue;

        if (family == Task::Push) {
            // The scripted standoff point must stay on the table.
            const double d = dist(s.goal_x, s.goal_y, tgt.x, tgt.y);
            const double ux = (s.goal_x - tgt.x) / d, uy = (s.goal_y - tgt.y) / d;
            const double sx = tgt.x - 0.3 * ux, sy = tgt.y - 0.3 * uy;
            if (std::abs(sx) > 0.95 || std::abs(sy) > 0.95)
                continue;
        }

        const char* verb = family == Task::PickPlace ? "put" : "push";
        const char* prep = family == Task::PickPlace ? "in" : "to";
        std::ostringstream text;
        text << verb << " the " << kColorNames[tgt.color] << ' '
             << (tgt.shape == ObjShape::Square ? "square" : "disc") << ' ' << prep << " the "
             << anchor.name;
        s.instruction = text.str();
        return s;
    }
    throw std::runtime_error("sample_scene: no valid layout after 1000 attempts");
}

EnvState init_state(const SceneSpec& scene) {
    Rng rng = Rng(scene.seed).derive(0xe44ec);
    EnvState st;
    st.object_positions.reserve(scene.objects.size());
    for (const auto& o : scene.objects)
        st.object_positions.push_back({o.x, o.y});

    const auto& tgt = scene.objects[scene.target_index];
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const double x = rng.uniform(-0.8, 0.8);
        const double y = rng.uniform(-0.8, 0.8);
        bool ok = true;
        for (const auto& o : scene.objects)
            if (dist(x, y, o.x, o.y) < 0.2)
                ok = false;
        if (ok && scene.task == Task::Push) {
            // The first approach leg must not land inside the target's
            // contact radius; keep the start-to-standoff segment clear.
            const double d = dist(scene.goal_x, scene.goal_y, tgt.x, tgt.y);
            const double ux = (scene.goal_x - tgt.x) / d, uy = (scene.goal_y - tgt.y) / d;
            const double p0x = tgt.x - 0.25 * ux, p0y = tgt.y - 0.25 * uy;
            if (seg_dist(tgt.x, tgt.y, x, y, p0x, p0y) < 0.15)
                ok = false;
        }
        if (ok) {
            st.x = x;
            st.y = y;
            return st;
        }
    }
    throw std::runtime_error("init_state: no valid effector start after 1000 attempts");
}

EnvState step(const EnvState& state, const Action& action, Task task) {
    const double nx = clampc(action.x);
    const double ny = clampc(action.y);
    const double ng = std::clamp(action.grip, 0.0, 1.0);
    const double dx = nx - state.x, dy = ny - state.y;

    EnvState out = state;
    out.x = nx;
    out.y = ny;
    out.grip = ng;

    if (state.held >= 0) {
        out.object_positions[state.held] = {nx, ny};
        if (state.grip >= kGripThreshold && ng < kGripThreshold)
            out.held = -1; // release; object stays at the drop point
        return out;
    }

    const bool closing = state.grip < kGripThreshold && ng >= kGripThreshold;
    if (closing) {
        int best = -1;
        double best_d = kPickupRadius;
        for (std::size_t i = 0; i < out.object_positions.size(); ++i) {
            const double d = dist(nx, ny, out.object_positions[i][0], out.object_positions[i][1]);
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            out.held = best;
            out.object_positions[best] = {nx, ny};
        }
        return out;
    }

    if (task == Task::Push && ng < kGripThreshold && (dx != 0.0 || dy != 0.0)) {
        const double mv = std::hypot(dx, dy);
        const double ux = dx / mv, uy = dy / mv;
        const double r2 = kPickupRadius * kPickupRadius;
        for (auto& pos : out.object_positions) {
            // swept contact: closest approach of the object to the segment
            // from the old to the new effector position
            const double sx = pos[0] - state.x, sy = pos[1] - state.y;
            const double s = std::clamp(sx * ux + sy * uy, 0.0, mv);
            const double qx = state.x + s * ux, qy = state.y + s * uy;
            const double cx = pos[0] - qx, cy = pos[1] - qy;
            if (cx * cx + cy * cy >= r2)
                continue;
            // minimal displacement along the motion vector that exits the
            // contact radius around the final effector position
            const double wx = pos[0] - nx, wy = pos[1] - ny;
            const double wu = wx * ux + wy * uy;
            const double disc = wu * wu - (wx * wx + wy * wy) + r2;
            const double alpha = -wu + std::sqrt(std::max(disc, 0.0));
            if (alpha <= 0.0)
                continue;
            pos[0] = clampc(pos[0] + alpha * ux);
            pos[1] = clampc(pos[1] + alpha * uy);
        }
    }
    return out;
}

void render(const EnvState& state, const SceneSpec& scene, float* out, int h, int w) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::fill(out, out + 3 * plane, 0.5f);

    auto put_px = [&](int row, int col, float r, float g, float b) {
        if (row < 0 || row >= h || col < 0 || col >= w)
            return;
        out[0 * plane + static_cast<std::size_t>(row) * w + col] = r;
        out[1 * plane + static_cast<std::size_t>(row) * w + col] = g;
        out[2 * plane + static_cast<std::size_t>(row) * w + col] = b;
    };
    auto to_col = [&](double x) { return static_cast<int>(std::lround((x + 1.0) * w / 2.0)); };
    auto to_row = [&](double y) { return static_cast<int>(std::lround((1.0 - y) * h / 2.0)); };

    const int half = std::max(1, (3 * h) / kDefaultImage); // blob half-side, 3 px at h=32

    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& obj = scene.objects[i];
        const auto& col = palette()[obj.color];
        const int cc = to_col(state.object_positions[i][0]);
        const int cr = to_row(state.object_positions[i][1]);
        for (int dr = -half; dr < half; ++dr) {
            for (int dc = -half; dc < half; ++dc) {
                if (obj.shape == ObjShape::Disc) {
                    const double rr = (dr + 0.5) * (dr + 0.5) + (dc + 0.5) * (dc + 0.5);
                    if (rr > static_cast<double>(half) * half)
                        continue;
                }
                put_px(cr + dr, cc + dc, col[0], col[1], col[2]);
            }
        }
    }

    // Effector: white crosshair, 2 px arms; filled 3x3 when the grip is closed.
    const int ec = to_col(state.x);
    const int er = to_row(state.y);
    for (int d = -2; d <= 2; ++d) {
        put_px(er + d, ec, 1.0f, 1.0f, 1.0f);
        put_px(er, ec + d, 1.0f, 1.0f, 1.0f);
    }
    if (state.grip > kGripThreshold)
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc)
                put_px(er + dr, ec + dc, 1.0f, 1.0f, 1.0f);
}

namespace {

struct Waypoint {
    double x, y, grip;
};

std::vector<Waypoint> plan(const SceneSpec& scene, const EnvState& start) {
    const auto& tgt = scene.objects[scene.target_index];
    std::vector<Waypoint> w;
    w.push_back({start.x, start.y, 0.0});
    if (scene.task == Task::PickPlace) {
        w.push_back({tgt.x, tgt.y, 0.0});
        w.push_back({tgt.x, tgt.y, 1.0});
        w.push_back({scene.goal_x, scene.goal_y, 1.0});
        w.push_back({scene.goal_x, scene.goal_y, 0.0});
    } else {
        const double d = dist(scene.goal_x, scene.goal_y, tgt.x, tgt.y);
        const double ux = (scene.goal_x - tgt.x) / d, uy = (scene.goal_y - tgt.y) / d;
        w.push_back({tgt.x - 0.25 * ux, tgt.y - 0.25 * uy, 0.0});
        w.push_back({tgt.x - 0.09 * ux, tgt.y - 0.09 * uy, 0.0});
        w.push_back({scene.goal_x - 0.09 * ux, scene.goal_y - 0.09 * uy, 0.0});
    }
    return w;
}

Action interp(const std::vector<Waypoint>& w, double param) {
    const int legs = static_cast<int>(w.size()) - 1;
    if (param >= static_cast<double>(legs)) {
        const Waypoint& e = w.back();
        return {e.x, e.y, e.grip};
    }
    const int leg = static_cast<int>(param);
    const double f = param - leg;
    const Waypoint& a = w[leg];
    const Waypoint& b = w[leg + 1];
    return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.grip + f * (b.grip - a.grip)};
}

} // namespace

Episode expert_demo(const SceneSpec& scene, int t, int h, int w) {
    if (t < 6)
        throw std::invalid_argument("expert_demo: T must be >= 6");
    EnvState state = init_state(scene);
    const auto waypoints = plan(scene, state);
    const int legs = static_cast<int>(waypoints.size()) - 1;

    Episode ep;
    ep.scene = scene;
    ep.tokens = tokenize(scene.instruction);
    ep.frames = Tensor<float>({t, 3, h, w});
    ep.actions = Tensor<float>({t, kActionDim});

    const std::size_t frame_sz = static_cast<std::size_t>(3) * h * w;
    ep.actions[0] = static_cast<float>(state.x);
    ep.actions[1] = static_cast<float>(state.y);
    ep.actions[2] = static_cast<float>(state.grip);
    render(state, scene, ep.frames.data(), h, w);

    for (int i = 1; i < t; ++i) {
        const double param = static_cast<double>(i) * legs / (t - 1);
        const Action a = interp(waypoints, param);
        state = step(state, a, scene.task);
        ep.actions[static_cast<std::size_t>(i) * kActionDim + 0] = static_cast<float>(a.x);
        ep.actions[static_cast<std::size_t>(i) * kActionDim + 1] = static_cast<float>(a.y);
        ep.actions[static_cast<std::size_t>(i) * kActionDim + 2] = static_cast<float>(a.grip);
        render(state, scene, ep.frames.data() + static_cast<std::size_t>(i) * frame_sz, h, w);
    }

    if (!check_success(scene, state))
        throw std::runtime_error("expert_demo: scripted policy failed the task");
    return ep;
}

bool check_success(const SceneSpec& scene, const EnvState& final_state) {
    const auto& pos = final_state.object_positions[scene.target_index];
    const double d = dist(pos[0], pos[1], scene.goal_x, scene.goal_y);
    if (scene.task == Task::PickPlace)
        return d <= kSuccessRadius && final_state.held != scene.target_index;
    return d <= kSuccessRadius;
}

EnvState execute(const SceneSpec& scene, const Tensor<float>& actions) {
    if (actions.shape.size() != 2 || actions.shape[1] != kActionDim)
        throw std::invalid_argument("execute: actions must be T x 3");
    EnvState state = init_state(scene);
    for (int i = 1; i < actions.shape[0]; ++i) {
        Action a;
        a.x = actions[static_cast<std::size_t>(i) * kActionDim + 0];
        a.y = actions[static_cast<std::size_t>(i) * kActionDim + 1];
        a.grip = actions[static_cast<std::size_t>(i) * kActionDim + 2];
        state = step(state, a, scene.task);
    }
    return state;
}

} // namespace covar::toy
