// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/trainer.hpp"

#include "covar/flow.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <stdexcept>

namespace covar {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;  // "init"
constexpr std::uint64_t kStepStream = 0x73746570;  // "step"
constexpr std::uint64_t kProbeStream = 0x6576616c; // "eval"

Conditioning<float> episode_cond(const toy::Episode& ep) {
    Conditioning<float> cond;
    const int h = ep.frames.shape[2], w = ep.frames.shape[3];
    cond.initial_frame = Tensor<float>({3, h, w});
    std::copy_n(ep.frames.v.begin(), cond.initial_frame.size(),
                cond.initial_frame.v.begin());
    cond.initial_action.assign(ep.actions.v.begin(),
                               ep.actions.v.begin() + ep.actions.shape[1]);
    cond.tokens = ep.tokens;
    return cond;
}

// One forward/backward on one episode; returns (loss, video, action) parts.
struct SampleLoss {
    double total = 0, video = 0, action = 0;
};

SampleLoss model_sample_pass(CovarModel<float>& model, const toy::Episode& ep,
                             const TrainConfig& cfg, Rng& rng, double inv_batch,
                             bool with_grad) {
    flow::JointState<float> x0;
    x0.video = ep.frames;
    x0.action = ep.actions;
    flow::JointState<float> x1;
    x1.video = Tensor<float>(x0.video.shape);
    x1.action = Tensor<float>(x0.action.shape);
    flow::fill_normal(x1.video, rng);
    flow::fill_normal(x1.action, rng);
    const double t = rng.uniform();

    auto x = flow::interpolate(x0, x1, t);
    auto target = flow::velocity_target(x0, x1);
    auto cond = episode_cond(ep);
    // hold the conditioning slots at their clean values, exactly as the
    // sampler does each step; their loss contribution is masked out below
    model.impose(x, cond);
    const auto mask =
        flow::LossMask::training(ep.frames.shape[0], model.config().video_branch, true);

    auto pred = model.forward(x, t, cond);
    SampleLoss out;
    if (mask.video_enabled)
        out.video = cfg.w_video *
                    flow::detail::masked_mse(pred.video, target.video, mask.video_frames, "video");
    out.action = cfg.w_action * flow::detail::masked_mse(pred.action, target.action,
                                                         mask.action_steps, "action");
    out.total = out.video + out.action;
    if (with_grad) {
        flow::VelocityPair<float> grad;
        grad.video = Tensor<float>(pred.video.shape);
        grad.action = Tensor<float>(pred.action.shape);
        flow::flow_loss_backward(pred, target, mask, grad, cfg.w_video * inv_batch,
                                 cfg.w_action * inv_batch);
        model.backward(grad);
    }
    return out;
}

void save_state(const std::string& path, const TrainConfig& cfg, const nn::Registry<float>& reg,
                const AdamW& opt, int step) {
    Checkpoint ck;
    ck.config["component"] = cfg.component;
    ck.config["train"] = to_json(cfg);
    if (cfg.component == "refiner")
        ck.config["refiner"] = to_json(cfg.refiner);
    else
        ck.config["model"] = to_json(cfg.model);
    ck.config["seed"] = cfg.seed;
    ck.step = static_cast<std::uint64_t>(step);
    ck.rng_state = cfg.seed;
    collect_params(reg, ck.arrays);
    opt.collect(reg, ck.arrays);
    save_checkpoint(path, ck);
}

} // namespace

void TrainConfig::validate() const {
    if (batch_size < 1 || steps < 0 || warmup < 0 || eval_every < 1 || checkpoint_every < 1)
        throw std::invalid_argument("train config: non-positive loop parameter");
    if (learning_rate <= 0.0 || grad_clip <= 0.0 || weight_decay < 0.0)
        throw std::invalid_argument("train config: non-positive optimizer parameter");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("train config: betas must lie in (0,1)");
    if (w_video < 0.0 || w_action < 0.0)
        throw std::invalid_argument("train config: negative loss weight");
    if (component != "model" && component != "refiner")
        throw std::invalid_argument("train config: unknown component " + component);
    if (component == "model")
        model.validate();
    else
        refiner.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"dataset_path", cfg.dataset_path},
            {"out_dir", cfg.out_dir},
            {"component", cfg.component},
            {"batch_size", cfg.batch_size},
            {"steps", cfg.steps},
            {"warmup", cfg.warmup},
            {"eval_every", cfg.eval_every},
            {"checkpoint_every", cfg.checkpoint_every},
            {"learning_rate", cfg.learning_rate},
            {"grad_clip", cfg.grad_clip},
            {"weight_decay", cfg.weight_decay},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"w_video", cfg.w_video},
            {"w_action", cfg.w_action},
            {"seed", cfg.seed},
            {"model", to_json(cfg.model)},
            {"refiner", to_json(cfg.refiner)},
            {"model_ckpt", cfg.model_ckpt}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.dataset_path = j.value("dataset_path", cfg.dataset_path);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.component = j.value("component", cfg.component);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.warmup = j.value("warmup", cfg.warmup);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.w_video = j.value("w_video", cfg.w_video);
    cfg.w_action = j.value("w_action", cfg.w_action);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("model"))
        cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("refiner"))
        cfg.refiner = refiner_config_from_json(j.at("refiner"));
    cfg.model_ckpt = j.value("model_ckpt", cfg.model_ckpt);
    cfg.validate();
    return cfg;
}

void AdamW::init(const nn::Registry<float>& reg) {
    m_.clear();
    v_.clear();
    for (const auto& p : reg.params()) {
        m_.emplace_back(p->size(), 0.0f);
        v_.emplace_back(p->size(), 0.0f);
    }
}

void AdamW::step(nn::Registry<float>& reg, double lr, double weight_decay, double beta1,
                 double beta2, int t) {
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    constexpr double eps = 1e-8;
    std::size_t k = 0;
    for (auto& p : reg.params()) {
        auto& m = m_[k];
        auto& v = v_[k];
        ++k;
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double g = p->g[i];
            m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g);
            v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * g * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->w[i] = static_cast<float>(
                p->w[i] - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->w[i]));
        }
    }
}

void AdamW::collect(const nn::Registry<float>& reg, std::vector<NamedArray>& out) const {
    std::size_t k = 0;
    for (const auto& p : reg.params()) {
        out.push_back({p->name + ".m", p->shape, m_[k]});
        out.push_back({p->name + ".v", p->shape, v_[k]});
        ++k;
    }
}

void AdamW::load(const nn::Registry<float>& reg, const Checkpoint& ck) {
    init(reg);
    std::size_t k = 0;
    for (const auto& p : reg.params()) {
        const auto* am = ck.find(p->name + ".m");
        const auto* av = ck.find(p->name + ".v");
        if (!am || !av)
            throw std::runtime_error("checkpoint: missing optimizer state for " + p->name);
        m_[k] = am->data;
        v_[k] = av->data;
        ++k;
    }
}

double clip_gradients(nn::Registry<float>& reg, double max_norm) {
    double total = 0.0;
    for (const auto& p : reg.params())
        total += kern::sumsq(p->g.data(), static_cast<int>(p->size()));
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0.0) {
        const float scale = static_cast<float>(max_norm / norm);
        for (auto& p : reg.params())
            for (auto& g : p->g)
                g *= scale;
    }
    return norm;
}

double lr_at(const TrainConfig& cfg, int step) {
    if (cfg.warmup > 0 && step < cfg.warmup)
        return cfg.learning_rate * (step + 1) / cfg.warmup;
    const int total = std::max(cfg.steps - cfg.warmup, 1);
    const double progress =
        std::min(1.0, static_cast<double>(step - cfg.warmup) / total);
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

std::string to_log_line(const TrainLogRow& row) {
    nlohmann::json j = {{"step", row.step},           {"loss", row.loss},
                        {"loss_video", row.loss_video}, {"loss_action", row.loss_action},
                        {"grad_norm", row.grad_norm}, {"lr", row.lr},
                        {"wall_ms", row.wall_ms}};
    if (row.eval_loss)
        j["eval_loss"] = *row.eval_loss;
    return j.dump();
}

Dataset Dataset::load(const std::string& dir) {
    Dataset d;
    d.manifest = io::read_manifest(dir);
    const std::size_t total = d.manifest.episodes.size();
    // keep manifest entries aligned with the episodes that actually loaded
    std::vector<io::ManifestEntry> loaded;
    for (const auto& e : d.manifest.episodes) {
        try {
            d.episodes.push_back(io::read_episode(fs::path(dir) / e.file, e.task));
            loaded.push_back(e);
        } catch (const std::exception&) {
            ++d.skipped;
        }
    }
    d.manifest.episodes = std::move(loaded);
    if (total > 0 && d.skipped * 100 > static_cast<int>(total))
        throw std::runtime_error("dataset: more than 1% of episodes unreadable");
    return d;
}

TrainLogRow train_step(CovarModel<float>& model, AdamW& opt, const TrainConfig& cfg,
                       const Dataset& data, int step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng(cfg.seed).derive(kStepStream, static_cast<std::uint64_t>(step));
    const double inv_batch = 1.0 / cfg.batch_size;

    TrainLogRow row;
    row.step = step;
    model.registry().zero_grad();
    for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& ep = data.episodes[rng.below(data.episodes.size())];
        const auto loss = model_sample_pass(model, ep, cfg, rng, inv_batch, true);
        row.loss += loss.total * inv_batch;
        row.loss_video += loss.video * inv_batch;
        row.loss_action += loss.action * inv_batch;
    }
    if (!std::isfinite(row.loss))
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    row.grad_norm = clip_gradients(model.registry(), cfg.grad_clip);
    row.lr = lr_at(cfg, step);
    opt.step(model.registry(), row.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, step + 1);
    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

TrainResult train_model(const TrainConfig& cfg, const Dataset& data, std::ostream& log,
                        bool resume, const std::function<void(int)>& on_step) {
    cfg.validate();
    if (data.episodes.empty())
        throw std::runtime_error("train: empty dataset");
    fs::create_directories(cfg.out_dir);
    const std::string last_path = (fs::path(cfg.out_dir) / "last.ck").string();
    const std::string final_path = (fs::path(cfg.out_dir) / "final.ck").string();

    CovarModel<float> model(cfg.model);
    AdamW opt;
    int start_step = 0;
    if (resume && fs::exists(last_path)) {
        const Checkpoint ck = load_checkpoint(last_path);
        if (ck.config.value("component", "") != "model")
            throw std::runtime_error("train: resume checkpoint is not a model checkpoint");
        load_params(model.registry(), ck);
        opt.load(model.registry(), ck);
        start_step = static_cast<int>(ck.step);
    } else {
        Rng init_rng = Rng(cfg.seed).derive(kInitStream);
        model.init_weights(init_rng);
        opt.init(model.registry());
    }

    // fixed probe for the periodic eval loss: same episodes, same noise
    auto probe = [&]() {
        const int n = std::min<std::size_t>(8, data.episodes.size());
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            Rng prng = Rng(cfg.seed).derive(kProbeStream, static_cast<std::uint64_t>(i));
            acc += model_sample_pass(model, data.episodes[i], cfg, prng, 1.0, false).total;
        }
        return acc / std::max(n, 1);
    };

    TrainResult res;
    res.steps_run = cfg.steps - start_step;
    for (int step = start_step; step < cfg.steps; ++step) {
        TrainLogRow row = train_step(model, opt, cfg, data, step);
        if (step == 0)
            res.first_loss = row.loss;
        res.final_loss = row.loss;
        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)
            row.eval_loss = probe();
        log << to_log_line(row) << "\n";
        log.flush();
        if ((step + 1) % cfg.checkpoint_every == 0)
            save_state(last_path, cfg, model.registry(), opt, step + 1);
        if (on_step)
            on_step(step);
    }
    save_state(final_path, cfg, model.registry(), opt, cfg.steps);
    res.checkpoint_path = final_path;
    return res;
}

TrainResult train_refiner(const TrainConfig& cfg, const Dataset& data, std::ostream& log,
                          bool resume) {
    cfg.validate();
    if (data.episodes.empty())
        throw std::runtime_error("train: empty dataset");
    fs::create_directories(cfg.out_dir);
    const std::string last_path = (fs::path(cfg.out_dir) / "last.ck").string();
    const std::string final_path = (fs::path(cfg.out_dir) / "final.ck").string();

    Refiner<float> ref(cfg.refiner);
    AdamW opt;
    int start_step = 0;
    if (resume && fs::exists(last_path)) {
        const Checkpoint ck = load_checkpoint(last_path);
        if (ck.config.value("component", "") != "refiner")
            throw std::runtime_error("train: resume checkpoint is not a refiner checkpoint");
        load_params(ref.registry(), ck);
        opt.load(ref.registry(), ck);
        start_step = static_cast<int>(ck.step);
    } else {
        Rng init_rng = Rng(cfg.seed).derive(kInitStream);
        ref.init_weights(init_rng);
        opt.init(ref.registry());
    }

    // optional model-sample channel for the coarse curriculum
    std::unique_ptr<CovarModel<float>> model;
    if (!cfg.model_ckpt.empty()) {
        const Checkpoint mck = load_checkpoint(cfg.model_ckpt);
        if (mck.config.value("component", "") != "model")
            throw std::runtime_error("train: model_ckpt is not a model checkpoint");
        model = std::make_unique<CovarModel<float>>(
            model_config_from_json(mck.config.at("model")));
        load_params(model->registry(), mck);
    }

    TrainResult res;
    res.steps_run = cfg.steps - start_step;
    for (int step = start_step; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng = Rng(cfg.seed).derive(kStepStream, static_cast<std::uint64_t>(step));
        const float inv_batch = 1.0f / cfg.batch_size;

        TrainLogRow row;
        row.step = step;
        ref.registry().zero_grad();
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& ep = data.episodes[rng.below(data.episodes.size())];
            auto cond = episode_cond(ep);
            Tensor<float> coarse;
            if (model && rng.uniform() < cfg.refiner.mix_model_fraction) {
                Rng srng = rng.derive(0x73616d70, b); // sampling noise stream
                auto sampled = flow::euler_sample<float>(*model, cond, 30, srng);
                coarse = sampled.action;
            } else {
                coarse = make_coarse(ep.actions, rng, cfg.refiner);
            }
            auto pred = ref.refine(coarse, cond);
            row.loss += refiner_loss(pred, ep.actions) * inv_batch;
            Tensor<float> dpred;
            refiner_loss_backward(pred, ep.actions, dpred);
            for (auto& g : dpred.v)
                g *= inv_batch;
            ref.backward(dpred);
        }
        row.loss_action = row.loss;
        if (!std::isfinite(row.loss))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
        row.grad_norm = clip_gradients(ref.registry(), cfg.grad_clip);
        row.lr = lr_at(cfg, step);
        opt.step(ref.registry(), row.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, step + 1);
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t0)
                          .count();
        if (step == 0)
            res.first_loss = row.loss;
        res.final_loss = row.loss;
        log << to_log_line(row) << "\n";
        log.flush();
        if ((step + 1) % cfg.checkpoint_every == 0)
            save_state(last_path, cfg, ref.registry(), opt, step + 1);
    }
    save_state(final_path, cfg, ref.registry(), opt, cfg.steps);
    res.checkpoint_path = final_path;
    return res;
}

} // namespace covar
