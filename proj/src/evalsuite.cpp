// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/evalsuite.hpp"

#include "covar/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace covar::eval {

nlohmann::json to_json(const EvalReport& r) {
    return {{"psnr_mean", r.psnr_mean},
            {"ssim_mean", r.ssim_mean},
            {"action_mse", r.action_mse},
            {"final_pos_error", r.final_pos_error},
            {"success_rate", r.success_rate},
            {"n_episodes", r.n_episodes},
            {"noise_seed", r.noise_seed},
            {"config", r.config}};
}

std::string to_table(const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "episodes %d | success %.3f | final_pos_err %.4f | action_mse %.5f | "
                  "psnr %.2f | ssim %.4f",
                  r.n_episodes, r.success_rate, r.final_pos_error, r.action_mse, r.psnr_mean,
                  r.ssim_mean);
    return buf;
}

std::vector<toy::SceneSpec> scenes_in_range(std::uint64_t lo, std::uint64_t hi, int max_n,
                                            toy::Task task) {
    std::vector<toy::SceneSpec> out;
    for (std::uint64_t s = lo; s < hi && static_cast<int>(out.size()) < max_n; ++s) {
        try {
            out.push_back(toy::sample_scene(s, task));
        } catch (const std::runtime_error&) {
            // rejection-sampling failure for this seed; skip
        }
    }
    return out;
}

namespace {

Conditioning<float> make_cond(const toy::Episode& gt) {
    Conditioning<float> cond;
    const int h = gt.frames.shape[2], w = gt.frames.shape[3];
    cond.initial_frame = Tensor<float>({3, h, w});
    std::copy_n(gt.frames.v.begin(), cond.initial_frame.size(), cond.initial_frame.v.begin());
    cond.initial_action.assign(gt.actions.v.begin(), gt.actions.v.begin() + gt.actions.shape[1]);
    cond.tokens = gt.tokens;
    return cond;
}

} // namespace

flow::JointState<float> ModelPolicy::rollout(const toy::Episode& gt, Rng& rng) {
    if (!model)
        throw std::invalid_argument("ModelPolicy: no model");
    const auto cond = make_cond(gt);
    auto out = flow::euler_sample<float>(*model, cond, steps, rng);
    if (refiner)
        out.action = refiner->refine(out.action, cond);
    if (!model->config().video_branch)
        out.video = Tensor<float>();
    return out;
}

flow::JointState<float> ExpertPolicy::rollout(const toy::Episode& gt, Rng& /*rng*/) {
    flow::JointState<float> out;
    out.video = gt.frames;
    out.action = gt.actions;
    return out;
}

EvalReport evaluate(Policy& policy, const std::vector<toy::SceneSpec>& scenes, int frames,
                    int height, int width, std::uint64_t noise_seed) {
    if (scenes.empty())
        throw std::invalid_argument("evaluate: no scenes");
    EvalReport r;
    r.n_episodes = static_cast<int>(scenes.size());
    r.noise_seed = noise_seed;
    int with_video = 0;
    for (const auto& scene : scenes) {
        const auto gt = toy::expert_demo(scene, frames, height, width);
        Rng rng = Rng(noise_seed).derive(scene.seed);
        const auto gen = policy.rollout(gt, rng);
        if (gen.video.size() > 0) {
            r.psnr_mean += psnr(gen.video, gt.frames);
            r.ssim_mean += ssim(gen.video, gt.frames);
            ++with_video;
        }
        const auto ae = action_errors(gen.action, gt.actions);
        r.action_mse += ae.mse;
        r.final_pos_error += ae.final_pos_error;
        const auto final_state = toy::execute(scene, gen.action);
        if (toy::check_success(scene, final_state))
            r.success_rate += 1.0;
    }
    if (with_video > 0) {
        r.psnr_mean /= with_video;
        r.ssim_mean /= with_video;
    }
    r.action_mse /= r.n_episodes;
    r.final_pos_error /= r.n_episodes;
    r.success_rate /= r.n_episodes;
    return r;
}

std::vector<AblationArm> ablation_arms(const ModelConfig& base) {
    std::vector<AblationArm> arms;
    arms.push_back({"full", base});
    AblationArm self{"self", base};
    self.config.attn = AttnMode::Self;
    arms.push_back(self);
    AblationArm cross{"cross", base};
    cross.config.attn = AttnMode::Cross;
    arms.push_back(cross);
    AblationArm mlp{"mlp_decoder", base};
    mlp.config.decoder = DecoderKind::Mlp;
    arms.push_back(mlp);
    AblationArm act{"action_only", base};
    act.config.video_branch = false;
    arms.push_back(act);
    return arms;
}

void assert_arm_isolation(const ModelConfig& base, const std::vector<AblationArm>& arms) {
    auto fingerprint = [](const ModelConfig& c) {
        // everything except the three flagged ablation fields
        return std::make_tuple(c.hidden, c.heads, c.block_pairs, c.patch, c.frames, c.height,
                               c.width, c.action_dim, c.vocab, c.text_len, c.bridge_interval);
    };
    for (const auto& arm : arms) {
        if (fingerprint(arm.config) != fingerprint(base))
            throw std::logic_error("ablation arm " + arm.name + " changes an unflagged field");
        int diffs = 0;
        diffs += arm.config.attn != base.attn;
        diffs += arm.config.decoder != base.decoder;
        diffs += arm.config.video_branch != base.video_branch;
        const int expect = arm.name == "full" ? 0 : 1;
        if (diffs != expect)
            throw std::logic_error("ablation arm " + arm.name + " must differ in exactly " +
                                   std::to_string(expect) + " flagged field(s)");
    }
}

double rank_sum_p(const std::vector<double>& a, const std::vector<double>& b) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    if (n == 0 || m == 0)
        throw std::invalid_argument("rank_sum_p: empty sample");
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const int total = n + m;

    // mid-ranks with ties
    std::vector<int> order(total);
    for (int i = 0; i < total; ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return pooled[x] < pooled[y]; });
    std::vector<double> rank(total, 0.0);
    for (int i = 0; i < total;) {
        int j = i;
        while (j < total && pooled[order[j]] == pooled[order[i]])
            ++j;
        const double mid = 0.5 * (i + j - 1) + 1.0;
        for (int k = i; k < j; ++k)
            rank[order[k]] = mid;
        i = j;
    }
    double observed = 0.0;
    for (int i = 0; i < n; ++i)
        observed += rank[i];

    // exact permutation distribution of the a-sample rank sum: enumerate all
    // C(n+m, n) assignments (tiny seed counts, so this is cheap)
    long ge = 0, count = 0;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i)
        idx[i] = i;
    while (true) {
        double s = 0.0;
        for (int i : idx)
            s += rank[i];
        if (s >= observed - 1e-12)
            ++ge;
        ++count;
        int i = n - 1;
        while (i >= 0 && idx[i] == total - n + i)
            --i;
        if (i < 0)
            break;
        ++idx[i];
        for (int j = i + 1; j < n; ++j)
            idx[j] = idx[j - 1] + 1;
    }
    return static_cast<double>(ge) / static_cast<double>(count);
}

nlohmann::json to_json(const std::vector<ArmResult>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"arm", r.name},
                       {"success_per_seed", r.success_per_seed},
                       {"mean_success", r.mean_success},
                       {"p_vs_full", r.p_vs_full}});
    return out;
}

std::string to_table(const std::vector<ArmResult>& rows) {
    std::ostringstream os;
    os << "arm          mean_success  p_vs_full  per-seed\n";
    for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-12s %12.3f %10.4f  ", r.name.c_str(),
                      r.mean_success, r.p_vs_full);
        os << buf;
        for (double s : r.success_per_seed)
            os << s << " ";
        os << "\n";
    }
    return os.str();
}

namespace {

void put_px(std::vector<unsigned char>& img, int strip_w, int x, int y,
            unsigned char rch, unsigned char g, unsigned char b) {
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * strip_w + x);
    img[o] = rch;
    img[o + 1] = g;
    img[o + 2] = b;
}

// trajectory point in frame f at panel offset, [-1,1] -> pixel
void draw_point(std::vector<unsigned char>& img, int strip_w, int h, int w, int panel,
                float px, float py, unsigned char rch, unsigned char g, unsigned char b) {
    const int x = panel * w + std::clamp(static_cast<int>((px + 1.0f) * 0.5f * (w - 1)), 0, w - 1);
    const int y = std::clamp(static_cast<int>((py + 1.0f) * 0.5f * (h - 1)), 0, h - 1);
    put_px(img, strip_w, x, y, rch, g, b);
}

} // namespace

void write_strip(const std::filesystem::path& path, const Tensor<float>& video,
                 const Tensor<float>& gt_actions, const Tensor<float>& gen_actions) {
    if (video.shape.size() != 4 || video.shape[1] != 3)
        throw std::invalid_argument("write_strip: video must be [T,3,H,W]");
    const int t = video.shape[0], h = video.shape[2], w = video.shape[3];
    const int strip_w = t * w;
    std::vector<unsigned char> img(3 * static_cast<std::size_t>(h) * strip_w, 0);
    for (int f = 0; f < t; ++f)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    const float v = video[((static_cast<std::size_t>(f) * 3 + c) * h + y) * w + x];
                    img[3 * (static_cast<std::size_t>(y) * strip_w + f * w + x) + c] =
                        static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
                }
    // panel f shows the trajectory prefix up to step f: ground truth red,
    // generated blue
    for (int f = 0; f < t; ++f) {
        for (int s = 0; s <= f && s < gt_actions.shape[0]; ++s)
            draw_point(img, strip_w, h, w, f, gt_actions[s * gt_actions.shape[1]],
                       gt_actions[s * gt_actions.shape[1] + 1], 255, 0, 0);
        for (int s = 0; s <= f && s < gen_actions.shape[0]; ++s)
            draw_point(img, strip_w, h, w, f, gen_actions[s * gen_actions.shape[1]],
                       gen_actions[s * gen_actions.shape[1] + 1], 0, 0, 255);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("write_strip: cannot open " + path.string());
    out << "P6\n" << strip_w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    if (!out)
        throw std::runtime_error("write_strip: write failed for " + path.string());
}

} // namespace covar::eval
