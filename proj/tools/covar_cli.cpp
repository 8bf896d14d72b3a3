// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

// covar: data generation, training, sampling, evaluation, and the ablation
// grid for the toyworld video/action co-generation stack.

#include "covar/checkpoint.hpp"
#include "covar/episode_io.hpp"
#include "covar/evalsuite.hpp"
#include "covar/flow.hpp"
#include "covar/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
namespace toy = covar::toy;
using covar::Rng;
using nlohmann::json;

namespace {

toy::Task parse_task(const std::string& s) {
    if (s == "pickplace")
        return toy::Task::PickPlace;
    if (s == "push")
        return toy::Task::Push;
    throw CLI::ValidationError("--task", "expected pickplace|push|mixed, got " + s);
}

// Every command records its resolved configuration and the hashes of the
// files it produced, so a run is reproducible from the manifest alone.
void write_run_manifest(const fs::path& dir, const std::string& command, const json& config,
                        const std::vector<fs::path>& artifacts) {
    json j;
    j["command"] = command;
    j["config"] = config;
    json hashes = json::object();
    for (const auto& p : artifacts)
        if (fs::exists(p))
            hashes[p.filename().string()] = covar::io::file_hash(p);
    j["artifact_hashes"] = hashes;
    std::ofstream out(dir / ("run_" + command + ".json"));
    out << j.dump(2) << "\n";
}

// Exclusive lock for training output dirs; concurrent writers are rejected.
struct DirLock {
    fs::path path;
    explicit DirLock(const fs::path& dir) : path(dir / ".lock") {
        if (fs::exists(path))
            throw std::runtime_error("output dir is locked by another run: " + path.string() +
                                     " (delete the stale .lock if no run is active)");
        std::ofstream(path) << "locked\n";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

covar::CovarModel<float> load_model(const std::string& ckpt_path, covar::Checkpoint* out_ck) {
    covar::Checkpoint ck = covar::load_checkpoint(ckpt_path);
    if (ck.config.value("component", "") != "model")
        throw std::runtime_error(ckpt_path + " is not a model checkpoint");
    covar::CovarModel<float> model(covar::model_config_from_json(ck.config.at("model")));
    covar::load_params(model.registry(), ck);
    if (out_ck)
        *out_ck = std::move(ck);
    return model;
}

covar::Refiner<float> load_refiner(const std::string& ckpt_path) {
    covar::Checkpoint ck = covar::load_checkpoint(ckpt_path);
    if (ck.config.value("component", "") != "refiner")
        throw std::runtime_error(ckpt_path + " is not a refiner checkpoint");
    covar::Refiner<float> ref(covar::refiner_config_from_json(ck.config.at("refiner")));
    covar::load_params(ref.registry(), ck);
    return ref;
}

// --- gen-data -------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    int episodes = 2000;
    std::string task = "mixed";
    std::uint64_t seed = 0;
    int frames = toy::kDefaultFrames;
    int image = toy::kDefaultImage;
    double val_frac = 0.1, test_frac = 0.1;
    bool force = false;
};

int run_gen_data(const GenDataArgs& a) {
    const fs::path dir(a.out);
    if (fs::exists(dir) && !fs::is_empty(dir) && !a.force) {
        std::cerr << "gen-data: " << a.out << " is not empty (use --force to overwrite)\n";
        return 1;
    }
    fs::create_directories(dir);
    if (a.episodes == 0)
        std::cerr << "gen-data: warning: --episodes 0, writing manifest only\n";

    covar::io::Manifest m;
    m.frames = a.frames;
    m.image = a.image;
    const int n_val = static_cast<int>(a.episodes * a.val_frac);
    const int n_test = static_cast<int>(a.episodes * a.test_frac);
    const int n_train = a.episodes - n_val - n_test;

    std::vector<fs::path> artifacts;
    std::uint64_t seed = a.seed;
    int written = 0, skipped = 0;
    while (written < a.episodes) {
        const toy::Task task = a.task == "mixed"
                                   ? (written % 2 == 0 ? toy::Task::PickPlace : toy::Task::Push)
                                   : parse_task(a.task);
        try {
            const auto scene = toy::sample_scene(seed, task);
            const auto ep = toy::expert_demo(scene, a.frames, a.image, a.image);
            if (!toy::check_success(scene, toy::execute(scene, ep.actions)))
                throw std::runtime_error("expert failed");
            char name[32];
            std::snprintf(name, sizeof(name), "ep_%06d.covr", written);
            covar::io::write_episode(dir / name, ep);
            m.episodes.push_back({name, task, seed});
            artifacts.push_back(dir / name);
            ++written;
        } catch (const std::runtime_error&) {
            ++skipped; // unplaceable scene or failing script for this seed
        }
        ++seed;
    }
    // split boundaries in written order; ranges are over dataset indices'
    // scene seeds (contiguous in generation order)
    m.train_lo = a.seed;
    m.train_hi = n_train > 0 ? m.episodes[n_train - 1].seed + 1 : a.seed;
    m.val_lo = m.train_hi;
    m.val_hi = n_val > 0 ? m.episodes[n_train + n_val - 1].seed + 1 : m.val_lo;
    m.test_lo = m.val_hi;
    m.test_hi = a.episodes > 0 ? m.episodes.back().seed + 1 : m.test_lo;
    covar::io::write_manifest(dir, m);
    artifacts.push_back(dir / "manifest.json");

    json cfg = {{"out", a.out},     {"episodes", a.episodes}, {"task", a.task},
                {"seed", a.seed},   {"frames", a.frames},     {"image", a.image},
                {"val_frac", a.val_frac}, {"test_frac", a.test_frac}};
    write_run_manifest(dir, "gen-data", cfg, artifacts);
    std::cout << "gen-data: wrote " << written << " episodes to " << a.out << " (skipped "
              << skipped << " seeds)\n";
    return 0;
}

// --- train / train-refiner --------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string data, out, model_ckpt;
    std::optional<int> steps, batch, warmup, eval_every, checkpoint_every;
    std::optional<double> lr, grad_clip, w_video, w_action;
    std::optional<std::uint64_t> seed;
    std::optional<int> hidden, heads, block_pairs, frames, image;
    std::string attn, decoder;
    bool no_video = false;
    bool resume = false;
};

covar::TrainConfig resolve_train_config(const TrainArgs& a, const std::string& component) {
    covar::TrainConfig cfg;
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in)
            throw std::runtime_error("cannot read config " + a.config_path);
        cfg = covar::train_config_from_json(json::parse(in));
    }
    cfg.component = component;
    if (!a.data.empty())
        cfg.dataset_path = a.data;
    if (!a.out.empty())
        cfg.out_dir = a.out;
    if (!a.model_ckpt.empty())
        cfg.model_ckpt = a.model_ckpt;
    if (a.steps)
        cfg.steps = *a.steps;
    if (a.batch)
        cfg.batch_size = *a.batch;
    if (a.warmup)
        cfg.warmup = *a.warmup;
    if (a.eval_every)
        cfg.eval_every = *a.eval_every;
    if (a.checkpoint_every)
        cfg.checkpoint_every = *a.checkpoint_every;
    if (a.lr)
        cfg.learning_rate = *a.lr;
    if (a.grad_clip)
        cfg.grad_clip = *a.grad_clip;
    if (a.w_video)
        cfg.w_video = *a.w_video;
    if (a.w_action)
        cfg.w_action = *a.w_action;
    if (a.seed)
        cfg.seed = *a.seed;
    auto& mc = cfg.model;
    if (a.hidden)
        mc.hidden = *a.hidden;
    if (a.heads)
        mc.heads = *a.heads;
    if (a.block_pairs)
        mc.block_pairs = *a.block_pairs;
    if (a.frames) {
        mc.frames = *a.frames;
        cfg.refiner.frames = *a.frames;
    }
    if (a.image) {
        mc.height = mc.width = *a.image;
        cfg.refiner.height = cfg.refiner.width = *a.image;
    }
    if (!a.attn.empty()) {
        if (a.attn == "bridge")
            mc.attn = covar::AttnMode::Bridge;
        else if (a.attn == "self")
            mc.attn = covar::AttnMode::Self;
        else if (a.attn == "cross")
            mc.attn = covar::AttnMode::Cross;
        else
            throw CLI::ValidationError("--attn", "expected bridge|self|cross");
    }
    if (!a.decoder.empty()) {
        if (a.decoder == "unet")
            mc.decoder = covar::DecoderKind::Unet;
        else if (a.decoder == "mlp")
            mc.decoder = covar::DecoderKind::Mlp;
        else
            throw CLI::ValidationError("--decoder", "expected unet|mlp");
    }
    if (a.no_video)
        mc.video_branch = false;
    mc.vocab = toy::vocab_size();
    mc.text_len = toy::kTokenLen;
    cfg.refiner.vocab = toy::vocab_size();
    cfg.refiner.text_len = toy::kTokenLen;
    if (cfg.dataset_path.empty() || cfg.out_dir.empty())
        throw CLI::RequiredError("--data and --out (or config equivalents)");
    return cfg;
}

int run_train(const TrainArgs& a, const std::string& component) {
    covar::TrainConfig cfg = resolve_train_config(a, component);
    covar::Dataset data = covar::Dataset::load(cfg.dataset_path);
    // train only on the train split
    std::vector<toy::Episode> train_eps;
    for (std::size_t i = 0; i < data.episodes.size(); ++i) {
        const auto seed = data.manifest.episodes[i].seed;
        if (seed >= data.manifest.train_lo && seed < data.manifest.train_hi)
            train_eps.push_back(std::move(data.episodes[i]));
    }
    data.episodes = std::move(train_eps);
    if (data.manifest.frames != cfg.model.frames || data.manifest.image != cfg.model.height) {
        cfg.model.frames = data.manifest.frames;
        cfg.model.height = cfg.model.width = data.manifest.image;
        cfg.refiner.frames = data.manifest.frames;
        cfg.refiner.height = cfg.refiner.width = data.manifest.image;
    }
    cfg.validate();

    fs::create_directories(cfg.out_dir);
    DirLock lock(cfg.out_dir);
    std::ofstream log(fs::path(cfg.out_dir) / "train.log",
                      a.resume ? std::ios::app : std::ios::trunc);
    std::cout << "train: " << data.episodes.size() << " episodes, " << cfg.steps << " steps, "
              << component << "\n";
    const covar::TrainResult res =
        component == "model" ? covar::train_model(cfg, data, log, a.resume)
                             : covar::train_refiner(cfg, data, log, a.resume);
    write_run_manifest(cfg.out_dir, component == "model" ? "train" : "train-refiner",
                       covar::to_json(cfg),
                       {fs::path(res.checkpoint_path), fs::path(cfg.out_dir) / "train.log"});
    std::cout << "train: done, first_loss " << res.first_loss << " final_loss " << res.final_loss
              << " -> " << res.checkpoint_path << "\n";
    return 0;
}

// --- sample ----------------------------------------------------------------

struct SampleArgs {
    std::string ckpt, refine, out = ".";
    std::uint64_t scene_seed = 0, noise_seed = 0;
    std::string task = "pickplace";
    int steps = 30;
};

int run_sample(const SampleArgs& a) {
    covar::Checkpoint ck;
    covar::CovarModel<float> model = load_model(a.ckpt, &ck);
    std::optional<covar::Refiner<float>> refiner;
    if (!a.refine.empty())
        refiner.emplace(load_refiner(a.refine));

    const toy::Task task = parse_task(a.task);
    const auto scene = toy::sample_scene(a.scene_seed, task);
    const auto& mc = model.config();
    const auto gt = toy::expert_demo(scene, mc.frames, mc.height, mc.width);

    covar::eval::ModelPolicy policy;
    policy.model = &model;
    policy.refiner = refiner ? &*refiner : nullptr;
    policy.steps = a.steps;
    Rng rng = Rng(a.noise_seed).derive(scene.seed);
    const auto gen = policy.rollout(gt, rng);

    fs::create_directories(a.out);
    const fs::path dir(a.out);
    toy::Episode out_ep;
    out_ep.frames = gen.video.size() > 0 ? gen.video : gt.frames;
    out_ep.actions = gen.action;
    out_ep.tokens = gt.tokens;
    out_ep.scene = scene;
    covar::io::write_episode(dir / "sample.covr", out_ep);
    covar::eval::write_strip(dir / "strip.ppm", out_ep.frames, gt.actions, gen.action);

    const auto final_state = toy::execute(scene, gen.action);
    json report = {{"scene_seed", a.scene_seed},
                   {"noise_seed", a.noise_seed},
                   {"task", a.task},
                   {"steps", a.steps},
                   {"success", toy::check_success(scene, final_state)},
                   {"instruction", scene.instruction}};
    if (gen.video.size() > 0) {
        report["psnr"] = covar::psnr(gen.video, gt.frames);
        report["ssim"] = covar::ssim(gen.video, gt.frames);
    }
    const auto ae = covar::action_errors(gen.action, gt.actions);
    report["action_mse"] = ae.mse;
    report["final_pos_error"] = ae.final_pos_error;
    std::ofstream(dir / "sample.json") << report.dump(2) << "\n";
    write_run_manifest(dir, "sample", report, {dir / "sample.covr", dir / "strip.ppm"});
    std::cout << report.dump(2) << "\n";
    return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt, refine, data, out;
    std::string split = "test";
    int episodes = 200;
    int steps = 30;
    std::uint64_t noise_seed = 0;
    std::string task = "pickplace";
    bool expert = false; // oracle stub: replays the scripted expert
};

int run_eval(const EvalArgs& a) {
    const covar::io::Manifest m = covar::io::read_manifest(a.data);
    std::uint64_t lo, hi;
    if (a.split == "train") {
        lo = m.train_lo;
        hi = m.train_hi;
    } else if (a.split == "val") {
        lo = m.val_lo;
        hi = m.val_hi;
    } else if (a.split == "test") {
        lo = m.test_lo;
        hi = m.test_hi;
    } else {
        throw CLI::ValidationError("--split", "expected train|val|test");
    }
    // the held-out pool continues past the recorded range if more scenes are
    // requested than were generated
    const auto scenes = covar::eval::scenes_in_range(
        lo, a.split == "test" ? std::max(hi, lo + 4 * a.episodes) : hi, a.episodes,
        parse_task(a.task));

    covar::eval::EvalReport report;
    if (a.expert) {
        covar::eval::ExpertPolicy policy;
        report = covar::eval::evaluate(policy, scenes, m.frames, m.image, m.image, a.noise_seed);
        report.config = {{"policy", "expert"}};
    } else {
        covar::Checkpoint ck;
        covar::CovarModel<float> model = load_model(a.ckpt, &ck);
        std::optional<covar::Refiner<float>> refiner;
        if (!a.refine.empty())
            refiner.emplace(load_refiner(a.refine));
        covar::eval::ModelPolicy policy;
        policy.model = &model;
        policy.refiner = refiner ? &*refiner : nullptr;
        policy.steps = a.steps;
        report = covar::eval::evaluate(policy, scenes, m.frames, m.image, m.image, a.noise_seed);
        report.config = {{"ckpt", a.ckpt}, {"refine", a.refine}, {"steps", a.steps},
                         {"split", a.split}, {"task", a.task}};
    }
    std::cout << covar::eval::to_table(report) << "\n";
    std::cout << covar::eval::to_json(report).dump(2) << "\n";
    if (!a.out.empty()) {
        fs::create_directories(fs::path(a.out).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(a.out).parent_path());
        std::ofstream(a.out) << covar::eval::to_json(report).dump(2) << "\n";
    }
    return 0;
}

// --- ablate ------------------------------------------------------------------

struct AblateArgs {
    std::string data, out;
    int seeds = 3;
    std::optional<int> steps, batch;
    std::optional<double> lr;
    int episodes = 200;
    double p_threshold = 0.1;
    std::string arms; // comma-separated subset; empty = all five
    std::optional<int> hidden, heads, block_pairs;
};

int run_ablate(const AblateArgs& a) {
    fs::create_directories(a.out);
    const covar::io::Manifest m = covar::io::read_manifest(a.data);

    covar::ModelConfig base;
    base.frames = m.frames;
    base.height = base.width = m.image;
    base.vocab = toy::vocab_size();
    base.text_len = toy::kTokenLen;
    if (a.hidden)
        base.hidden = *a.hidden;
    if (a.heads)
        base.heads = *a.heads;
    if (a.block_pairs)
        base.block_pairs = *a.block_pairs;
    auto arms = covar::eval::ablation_arms(base);
    covar::eval::assert_arm_isolation(base, arms);
    if (!a.arms.empty()) {
        std::vector<covar::eval::AblationArm> keep;
        std::stringstream ss(a.arms);
        std::string tok;
        while (std::getline(ss, tok, ','))
            for (const auto& arm : arms)
                if (arm.name == tok)
                    keep.push_back(arm);
        if (keep.empty())
            throw CLI::ValidationError("--arms", "no valid arm names in " + a.arms);
        arms = std::move(keep);
    }

    const auto scenes = covar::eval::scenes_in_range(
        m.test_lo, std::max(m.test_hi, m.test_lo + 4 * a.episodes), a.episodes,
        toy::Task::PickPlace);

    std::vector<covar::eval::ArmResult> rows;
    for (const auto& arm : arms) {
        covar::eval::ArmResult row;
        row.name = arm.name;
        for (int s = 0; s < a.seeds; ++s) {
            TrainArgs ta;
            ta.data = a.data;
            const fs::path run_dir = fs::path(a.out) / (arm.name + "_seed" + std::to_string(s));
            ta.out = run_dir.string();
            covar::TrainConfig cfg = resolve_train_config(ta, "model");
            cfg.model = arm.config;
            cfg.seed = s;
            if (a.steps)
                cfg.steps = *a.steps;
            if (a.batch)
                cfg.batch_size = *a.batch;
            if (a.lr)
                cfg.learning_rate = *a.lr;

            covar::Dataset data = covar::Dataset::load(a.data);
            fs::create_directories(cfg.out_dir);
            std::ofstream log(run_dir / "train.log");
            std::cout << "ablate: training " << arm.name << " seed " << s << " (" << cfg.steps
                      << " steps)\n";
            const auto res = covar::train_model(cfg, data, log, /*resume=*/true);

            covar::Checkpoint ck;
            covar::CovarModel<float> model = load_model(res.checkpoint_path, &ck);
            covar::eval::ModelPolicy policy;
            policy.model = &model;
            const auto rep = covar::eval::evaluate(policy, scenes, m.frames, m.image, m.image,
                                                   /*noise_seed=*/1000 + s);
            std::cout << "ablate: " << arm.name << " seed " << s << " -> "
                      << covar::eval::to_table(rep) << "\n";
            row.success_per_seed.push_back(rep.success_rate);
        }
        for (double v : row.success_per_seed)
            row.mean_success += v;
        row.mean_success /= row.success_per_seed.size();
        rows.push_back(std::move(row));
    }

    const auto* full = &rows[0];
    for (const auto& r : rows)
        if (r.name == "full")
            full = &r;
    bool ordering_ok = true;
    for (auto& r : rows) {
        if (r.name == "full") {
            r.p_vs_full = 0.0;
            continue;
        }
        r.p_vs_full = covar::eval::rank_sum_p(full->success_per_seed, r.success_per_seed);
        if (full->mean_success <= r.mean_success || r.p_vs_full >= a.p_threshold)
            ordering_ok = false;
    }

    std::cout << covar::eval::to_table(rows);
    std::ofstream(fs::path(a.out) / "ablation.json")
        << covar::eval::to_json(rows).dump(2) << "\n";
    const covar::TrainConfig defaults;
    write_run_manifest(a.out, "ablate",
                       {{"data", a.data},
                        {"seeds", a.seeds},
                        {"episodes", a.episodes},
                        {"p_threshold", a.p_threshold},
                        {"steps", a.steps ? *a.steps : defaults.steps},
                        {"batch", a.batch ? *a.batch : defaults.batch_size},
                        {"lr", a.lr ? *a.lr : defaults.learning_rate},
                        {"hidden", base.hidden},
                        {"heads", base.heads},
                        {"block_pairs", base.block_pairs}},
                       {fs::path(a.out) / "ablation.json"});
    if (!ordering_ok) {
        std::cerr << "ablate: ordering/threshold not met\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"toyworld video/action co-generation pipeline"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "generate an expert demonstration dataset");
    gen->add_option("--out", gd.out, "output directory")->required();
    gen->add_option("--episodes", gd.episodes, "number of episodes");
    gen->add_option("--task", gd.task, "pickplace|push|mixed");
    gen->add_option("--seed", gd.seed, "base scene seed");
    gen->add_option("--frames", gd.frames, "frames per episode");
    gen->add_option("--image", gd.image, "image height/width");
    gen->add_option("--val-frac", gd.val_frac, "validation fraction");
    gen->add_option("--test-frac", gd.test_frac, "test fraction");
    gen->add_flag("--force", gd.force, "overwrite a non-empty directory");

    auto add_train_opts = [](CLI::App* cmd, TrainArgs& ta, bool refiner) {
        cmd->add_option("--config", ta.config_path, "json config file");
        cmd->add_option("--data", ta.data, "dataset directory");
        cmd->add_option("--out", ta.out, "output directory");
        cmd->add_option("--steps", ta.steps, "training steps");
        cmd->add_option("--batch", ta.batch, "batch size");
        cmd->add_option("--warmup", ta.warmup, "warmup steps");
        cmd->add_option("--eval-every", ta.eval_every, "probe interval");
        cmd->add_option("--checkpoint-every", ta.checkpoint_every, "checkpoint interval");
        cmd->add_option("--lr", ta.lr, "peak learning rate");
        cmd->add_option("--grad-clip", ta.grad_clip, "gradient clip norm");
        cmd->add_option("--seed", ta.seed, "training seed");
        cmd->add_flag("--resume", ta.resume, "resume from out/last.ck");
        if (refiner) {
            cmd->add_option("--model-ckpt", ta.model_ckpt,
                            "model checkpoint for the sampled coarse channel");
        } else {
            cmd->add_option("--hidden", ta.hidden, "hidden width");
            cmd->add_option("--heads", ta.heads, "attention heads");
            cmd->add_option("--block-pairs", ta.block_pairs, "transformer block pairs");
            cmd->add_option("--attn", ta.attn, "bridge|self|cross");
            cmd->add_option("--decoder", ta.decoder, "unet|mlp");
            cmd->add_flag("--no-video", ta.no_video, "disable the video branch");
            cmd->add_option("--w-video", ta.w_video, "video loss weight");
            cmd->add_option("--w-action", ta.w_action, "action loss weight");
        }
    };
    TrainArgs tr, trr;
    auto* train = app.add_subcommand("train", "train the co-generation model");
    add_train_opts(train, tr, false);
    auto* trainr = app.add_subcommand("train-refiner", "train the action refiner");
    add_train_opts(trainr, trr, true);

    SampleArgs sa;
    auto* sample = app.add_subcommand("sample", "generate one episode from a checkpoint");
    sample->add_option("--ckpt", sa.ckpt, "model checkpoint")->required();
    sample->add_option("--refine", sa.refine, "refiner checkpoint (optional)");
    sample->add_option("--scene-seed", sa.scene_seed, "scene seed");
    sample->add_option("--noise-seed", sa.noise_seed, "sampling noise seed");
    sample->add_option("--task", sa.task, "pickplace|push");
    sample->add_option("--steps", sa.steps, "sampler steps");
    sample->add_option("--out", sa.out, "output directory");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out scenes");
    ev->add_option("--ckpt", ea.ckpt, "model checkpoint");
    ev->add_option("--refine", ea.refine, "refiner checkpoint (optional)");
    ev->add_option("--data", ea.data, "dataset directory (for the split ranges)")->required();
    ev->add_option("--split", ea.split, "train|val|test");
    ev->add_option("--episodes", ea.episodes, "number of held-out scenes");
    ev->add_option("--steps", ea.steps, "sampler steps");
    ev->add_option("--noise-seed", ea.noise_seed, "sampling noise seed");
    ev->add_option("--task", ea.task, "pickplace|push");
    ev->add_option("--out", ea.out, "report output file");
    ev->add_flag("--expert", ea.expert, "replay the scripted expert (oracle stub)");

    AblateArgs aa;
    auto* ab = app.add_subcommand("ablate", "train and compare the ablation grid");
    ab->add_option("--data", aa.data, "dataset directory")->required();
    ab->add_option("--out", aa.out, "output directory")->required();
    ab->add_option("--seeds", aa.seeds, "seeds per arm");
    ab->add_option("--steps", aa.steps, "training steps per run");
    ab->add_option("--batch", aa.batch, "batch size");
    ab->add_option("--lr", aa.lr, "peak learning rate");
    ab->add_option("--episodes", aa.episodes, "held-out scenes per eval");
    ab->add_option("--p-threshold", aa.p_threshold, "rank-test significance threshold");
    ab->add_option("--arms", aa.arms, "comma-separated arm subset");
    ab->add_option("--hidden", aa.hidden, "hidden width for all arms");
    ab->add_option("--heads", aa.heads, "attention heads for all arms");
    ab->add_option("--block-pairs", aa.block_pairs, "transformer block pairs for all arms");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return run_gen_data(gd);
        if (train->parsed())
            return run_train(tr, "model");
        if (trainr->parsed())
            return run_train(trr, "refiner");
        if (sample->parsed())
            return run_sample(sa);
        if (ev->parsed())
            return run_eval(ea);
        if (ab->parsed())
            return run_ablate(aa);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "covar: " << e.what() << "\n";
        return 2;
    } catch (const CLI::RequiredError& e) {
        std::cerr << "covar: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "covar: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
