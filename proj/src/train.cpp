#include "s2r/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace s2r {

void TrainConfig::validate(int temporal_ratio) const {
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    if (chunk_T < 1 || (chunk_T - 1) % 4 != 0)
        throw ConfigError("train: chunk T ≡ 1 mod 4 required, got " + std::to_string(chunk_T));
    if (temporal_ratio >= 1 && (chunk_T - 1) % temporal_ratio != 0)
        throw ConfigError("train: chunk T ≡ 1 mod " + std::to_string(temporal_ratio) +
                          " required, got " + std::to_string(chunk_T));
    if (tail_drop.candidates.empty()) throw ConfigError("train: tail drop candidate set is empty");
}

Pipeline build_pipeline(const PipelineConfig& cfg, int H, int W, int chunk_T,
                        std::uint64_t seed, const PCABasis* basis,
                        const TrainCheckpoint* backbone) {
    if (H < 16 || W < 16 || H % 16 || W % 16)
        throw ConfigError("pipeline: H and W must be positive multiples of 16");
    if (chunk_T < 1 || (chunk_T - 1) % 4 != 0)
        throw ConfigError("pipeline: T ≡ 1 mod 4 required, got " + std::to_string(chunk_T));

    Pipeline p;
    p.cfg = cfg;
    p.cfg.dit.t_lat = 1 + (chunk_T - 1) / 4;
    p.cfg.dit.h = H / 16;
    p.cfg.dit.w = W / 16;
    p.cfg.dit.validate();

    // stream 0 of the per-step rng family is reserved for initialization
    Rng rng(hash_u64(seed ^ hash_u64(0)));
    p.dit = std::make_unique<DiT>(p.cfg.dit, p.params, rng);
    if (backbone) restore(*backbone, p.params, nullptr);

    if (basis) {
        p.cfg.aligner.S = cfg.S;
        p.cfg.aligner.in_channels = basis->k_m;
        if (p.cfg.aligner.temporal_ratio != 4)
            throw ConfigError(
                "pipeline: aligner temporal_ratio must be 4 to land on the latent timeline");
        p.cfg.aligner.validate();
        p.cfg.control.cond_dim = p.cfg.aligner.out_channels;
        p.cfg.control.validate(p.cfg.dit);

        p.branch = std::make_unique<ControlBranch>(*p.dit, p.cfg.control, p.params, rng);
        p.aligner = std::make_unique<Aligner>(p.cfg.aligner, p.params, rng);
        p.basis = *basis;
    }
    p.vfm = make_toy_vfm(cfg.vfm_channels);
    return p;
}

FeatureGrid condition_features(const Pipeline& p, const VideoClip& clip) {
    if (!p.conditioned()) throw ConfigError("pipeline has no conditioning stack");
    FeatureGrid feats = extract_features(clip, *p.vfm, p.cfg.S);
    FeatureGrid proj = project(feats, p.basis);
    return p.cfg.whiten ? whiten(proj, p.basis) : proj;
}

ad::Var condition_var(const Pipeline& p, const FeatureGrid& masked) {
    ad::Var in = ad::leaf(grid_to_tensor(masked), "condition_input");
    in->requires_grad = false;
    return p.aligner->forward(in);
}

std::uint64_t hash_group(const ParamStore& params, const std::string& prefix) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params.all()) {
        if (p->name.rfind(prefix, 0) != 0) continue;
        h = fnv1a(p->name.data(), p->name.size(), h);
        h = fnv1a(p->val.data.data(), p->val.data.size() * sizeof(double), h);
    }
    return h;
}

void set_group_trainable(ParamStore& params, const std::string& prefix, bool trainable) {
    for (const auto& p : params.all())
        if (p->name.rfind(prefix, 0) == 0) p->requires_grad = trainable;
}

std::vector<ad::Var> trainable_params(const ParamStore& params) {
    std::vector<ad::Var> out;
    for (const auto& p : params.all())
        if (p->requires_grad) out.push_back(p);
    return out;
}

std::vector<LoadedClip> load_clips_with_suffix(const std::string& data_root,
                                               const std::string& suffix) {
    auto rows = read_manifest(data_root + "/manifest.tsv");
    std::vector<LoadedClip> out;
    for (const auto& row : rows) {
        if (row.clip_id.size() < suffix.size() ||
            row.clip_id.compare(row.clip_id.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        out.push_back({row.clip_id, read_clip_dir(data_root + "/" + row.clip_id)});
    }
    if (out.empty())
        throw DataError("dataset empty: no '" + suffix + "' clips under " + data_root);
    return out;
}

VideoClip random_crop_chunk(const VideoClip& clip, int T, Rng& rng) {
    if (clip.T < T)
        throw DataError("clip shorter than chunk: have " + std::to_string(clip.T) +
                        " frames, need " + std::to_string(T));
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(clip.T - T + 1)));
    VideoClip out(T, clip.H, clip.W);
    std::memcpy(out.data.data(), clip.frame(start), out.data.size() * sizeof(float));
    return out;
}

StepResult train_step(Pipeline& p, Adam& opt, const std::vector<LoadedClip>& clips,
                      const TrainConfig& cfg, std::uint64_t step) {
    Rng rng(hash_u64(cfg.seed ^ hash_u64(step)));

    std::vector<std::size_t> picked(static_cast<std::size_t>(cfg.batch));
    std::vector<VideoClip> crops(static_cast<std::size_t>(cfg.batch));
    for (int i = 0; i < cfg.batch; ++i) {
        picked[static_cast<std::size_t>(i)] = static_cast<std::size_t>(rng.below(clips.size()));
        crops[static_cast<std::size_t>(i)] =
            random_crop_chunk(clips[picked[static_cast<std::size_t>(i)]].video, cfg.chunk_T, rng);
    }

    StepResult res;
    res.clip_index = picked[0];
    res.clip_id = clips[picked[0]].id;

    ChannelMask mask;
    if (p.conditioned()) {
        mask = sample_tail_drop(cfg.tail_drop, rng);
        res.k = mask.k;
    }

    ad::Var total;
    for (int i = 0; i < cfg.batch; ++i) {
        const VideoClip& crop = crops[static_cast<std::size_t>(i)];
        ad::Var item_loss;
        if (p.conditioned()) {
            FeatureGrid masked = apply_mask(condition_features(p, crop), mask);
            BoundCondition bound(*p.branch, condition_var(p, masked));
            item_loss = training_loss(*p.dit, &bound, crop, rng);
        } else {
            item_loss = training_loss(*p.dit, nullptr, crop, rng);
        }
        total = i == 0 ? item_loss : ad::add(total, item_loss);
    }
    if (cfg.batch > 1) total = ad::scale(total, 1.0 / cfg.batch);

    res.loss = total->val[0];
    if (!std::isfinite(res.loss)) {
        std::string ids;
        for (int i = 0; i < cfg.batch; ++i) {
            if (i) ids += ", ";
            ids += clips[picked[static_cast<std::size_t>(i)]].id;
        }
        throw NumericError("non-finite training loss at step " + std::to_string(step) +
                           " (batch: " + ids + ")");
    }

    opt.zero_grad();
    ad::backward(total);
    opt.step();
    return res;
}

namespace {

std::string checkpoint_path(const std::string& out_dir, std::uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%06llu.s2rc", static_cast<unsigned long long>(step));
    return out_dir + "/" + buf;
}

}  // namespace

TrainRun train(TrainMode mode, const TrainConfig& cfg, const PipelineConfig& pcfg,
               const std::string& data_root, const std::string& pca_path,
               const std::string& out_dir, const std::string& backbone_path,
               const std::string& resume_path) {
    cfg.validate(pcfg.aligner.temporal_ratio);
    std::filesystem::create_directories(out_dir);

    auto clips = load_clips_with_suffix(data_root, "_real");
    for (const auto& c : clips)
        if (c.video.T < cfg.chunk_T)
            throw DataError("clip '" + c.id + "' has " + std::to_string(c.video.T) +
                            " frames, shorter than chunk T=" + std::to_string(cfg.chunk_T));

    PCABasis basis;
    std::uint64_t pca_hash = 0;
    if (mode == TrainMode::control) {
        basis = load_basis(pca_path);
        pca_hash = file_content_hash(pca_path);
        if (cfg.tail_drop.candidates.back() != basis.k_m)
            throw ConfigError("train: tail drop max (" +
                              std::to_string(cfg.tail_drop.candidates.back()) +
                              ") must equal the basis k_m (" + std::to_string(basis.k_m) + ")");
    }

    TrainCheckpoint backbone;
    const bool have_backbone = mode == TrainMode::control && !backbone_path.empty();
    if (have_backbone) backbone = load_checkpoint(backbone_path);

    TrainCheckpoint resume_ckpt;
    const bool resuming = !resume_path.empty();
    if (resuming) {
        resume_ckpt = load_checkpoint(resume_path);
        if (resume_ckpt.seed != cfg.seed)
            throw ConfigError("resume checkpoint was written with seed " +
                              std::to_string(resume_ckpt.seed) + ", config says " +
                              std::to_string(cfg.seed));
        if (mode == TrainMode::control && resume_ckpt.pca_hash != pca_hash)
            throw DataError("PCA basis file changed since the checkpoint was written: " +
                            pca_path);
    }

    const int H = clips[0].video.H, W = clips[0].video.W;
    Pipeline p = build_pipeline(pcfg, H, W, cfg.chunk_T, cfg.seed,
                                mode == TrainMode::control ? &basis : nullptr,
                                have_backbone ? &backbone : nullptr);
    if (mode == TrainMode::control) set_group_trainable(p.params, "dit.", false);

    AdamConfig ocfg;
    ocfg.lr = cfg.lr;
    Adam opt(trainable_params(p.params), ocfg);
    if (resuming) {
        restore(resume_ckpt, p.params, &opt);
        if (mode == TrainMode::control) set_group_trainable(p.params, "dit.", false);
    }

    std::ofstream log(out_dir + "/train_log.txt", std::ios::app);
    if (!log) throw DataError("cannot open training log under " + out_dir);

    TrainRun run;
    run.start_step = resuming ? resume_ckpt.step : 0;
    run.final_checkpoint = resume_path;

    for (std::uint64_t step = run.start_step + 1;
         step <= static_cast<std::uint64_t>(cfg.steps); ++step) {
        StepResult r;
        try {
            r = train_step(p, opt, clips, cfg, step);
        } catch (const NumericError& e) {
            log << "step " << step << " aborted: " << e.what() << '\n' << std::flush;
            throw;
        }
        char loss_txt[40];
        std::snprintf(loss_txt, sizeof(loss_txt), "%.17g", r.loss);
        log << step << '\t' << loss_txt << '\t' << r.k << '\n' << std::flush;
        run.losses.push_back(r.loss);
        run.ks.push_back(r.k);

        if (step % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 ||
            step == static_cast<std::uint64_t>(cfg.steps)) {
            const std::string path = checkpoint_path(out_dir, step);
            save_checkpoint(path, snapshot(step, cfg.seed, p.params, &opt,
                                           mode == TrainMode::control ? pca_path : "",
                                           pca_hash));
            run.final_checkpoint = path;
        }
    }
    return run;
}

}  // namespace s2r
