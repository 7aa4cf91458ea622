#include <CLI11.hpp>
#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "s2r/config.hpp"
#include "s2r/infer.hpp"
#include "s2r/metrics.hpp"

namespace fs = std::filesystem;
using namespace s2r;

namespace {

std::string parent_or_dot(const std::string& path) {
    const std::string p = fs::path(path).parent_path().string();
    return p.empty() ? "." : p;
}

std::string strip_suffix(std::string name, const std::string& suffix) {
    if (name.size() > suffix.size() && name.ends_with(suffix))
        name.resize(name.size() - suffix.size());
    return name;
}

void alias_final(const std::string& final_ckpt, const std::string& dir) {
    fs::copy_file(final_ckpt, dir + "/ckpt_final.s2rc", fs::copy_options::overwrite_existing);
}

void cmd_gen(const AppConfig& cfg) {
    std::vector<SceneSpec> specs;
    for (int i = 0; i < cfg.data.clips; ++i) specs.push_back(scene_spec(cfg, i));
    const std::string manifest = write_dataset(specs, cfg.data.root);
    write_run_record(cfg.data.root, cfg);
    std::cout << "wrote " << cfg.data.clips << " paired clips, manifest " << manifest << "\n";
}

void cmd_fit_pca(const AppConfig& cfg) {
    std::vector<ManifestRow> rows;
    for (const auto& r : read_manifest(cfg.data.root + "/manifest.tsv"))
        if (r.clip_id.ends_with("_real")) rows.push_back(r);
    if (rows.empty())
        throw DataError("no '_real' clips in the manifest under " + cfg.data.root);

    auto backend = make_toy_vfm(cfg.vfm.channels);
    IncrementalPCA pca(cfg.vfm.channels, cfg.pca.k_m);
    int pushed = 0;
    for (std::uint64_t round = 0; pushed < cfg.pca.fit_frames; ++round) {
        for (const auto& [clip_id, frame] : sample_fitting_frames(rows, cfg.pca.seed + round)) {
            if (pushed >= cfg.pca.fit_frames) break;
            const VideoClip clip = read_clip_dir(cfg.data.root + "/" + clip_id);
            VideoClip single(1, clip.H, clip.W);
            std::memcpy(single.data.data(), clip.frame(frame),
                        single.data.size() * sizeof(float));
            pca.push_grid(extract_features(single, *backend, cfg.vfm.s));
            ++pushed;
        }
    }
    const PCABasis basis = stabilize_signs(pca.finalize());
    save_basis(basis, cfg.pca.basis);
    write_run_record(parent_or_dot(cfg.pca.basis), cfg);
    std::cout << "fitted " << basis.k_m << " of " << basis.C << " feature coordinates from "
              << pushed << " frames -> " << cfg.pca.basis << "\n";
}

void cmd_pretrain(const AppConfig& cfg) {
    TrainConfig tcfg = train_config(cfg);
    tcfg.steps = cfg.train.pretrain_steps;
    const std::string out = cfg.train.out + "/pretrain";
    TrainRun run = train(TrainMode::backbone, tcfg, pipeline_config(cfg), cfg.data.root, "", out);
    alias_final(run.final_checkpoint, out);
    write_run_record(out, cfg);
    std::cout << "pretrained denoiser for " << tcfg.steps << " steps, final loss "
              << run.losses.back() << ", checkpoint " << out << "/ckpt_final.s2rc\n";
}

void cmd_train(const AppConfig& cfg, const std::string& resume_flag) {
    const std::string resume = resume_flag.empty() ? cfg.train.resume : resume_flag;
    const std::string out = cfg.train.out + "/control";
    TrainRun run = train(TrainMode::control, train_config(cfg), pipeline_config(cfg),
                         cfg.data.root, cfg.pca.basis, out, cfg.train.backbone, resume);
    alias_final(run.final_checkpoint, out);
    write_run_record(out, cfg);
    std::cout << "trained control stack for " << run.losses.size() << " steps, final loss "
              << run.losses.back() << ", checkpoint " << out << "/ckpt_final.s2rc\n";
}

void cmd_infer(const AppConfig& cfg, bool long_mode) {
    require_key(cfg.infer.checkpoint, "checkpoint", "infer");
    require_key(cfg.infer.input, "input", "infer");

    const PCABasis basis = load_basis(cfg.pca.basis);
    const TrainCheckpoint ckpt = load_checkpoint(cfg.infer.checkpoint);
    if (!ckpt.pca_path.empty() && ckpt.pca_hash != file_content_hash(cfg.pca.basis))
        throw DataError("checkpoint " + cfg.infer.checkpoint +
                        " was trained against a different feature basis than " + cfg.pca.basis);
    Pipeline p = build_pipeline(pipeline_config(cfg), cfg.data.h, cfg.data.w, cfg.train.chunk_t,
                                ckpt.seed, &basis, nullptr);
    restore(ckpt, p.params, nullptr);

    const VideoClip sim = read_clip_dir(cfg.infer.input);
    const VideoClip out_clip =
        long_mode
            ? translate_long(p, sim, cfg.infer.chunk_t, cfg.infer.k, cfg.infer.steps,
                             cfg.infer.seed)
            : translate(p, sim, cfg.infer.k, cfg.infer.steps, cfg.infer.seed);

    const std::string stem =
        strip_suffix(fs::path(cfg.infer.input).filename().string(), "_sim");
    const std::string out_dir = cfg.infer.out + "/" + stem + "_gen";
    write_clip_dir(out_dir, out_clip, nullptr, nullptr, cfg.infer.seed);
    write_run_record(cfg.infer.out, cfg);
    std::cout << "translated " << sim.T << " frames (k=" << cfg.infer.k << ", steps "
              << cfg.infer.steps << (long_mode ? ", windowed" : "") << ") -> " << out_dir << "\n";
}

void cmd_eval(const AppConfig& cfg) {
    require_key(cfg.eval.gen_dir, "gen_dir", "eval");
    require_key(cfg.eval.ref_dir, "ref_dir", "eval");

    std::vector<std::string> stems;
    if (fs::is_directory(cfg.eval.gen_dir))
        for (const auto& e : fs::directory_iterator(cfg.eval.gen_dir))
            if (e.is_directory() && e.path().filename().string().ends_with("_gen"))
                stems.push_back(strip_suffix(e.path().filename().string(), "_gen"));
    if (stems.empty())
        throw DataError("no '*_gen' clip directories under " + cfg.eval.gen_dir);
    std::sort(stems.begin(), stems.end());

    std::vector<VideoClip> gen, sim, real;
    std::vector<FlowField> flows;
    std::vector<MaskClip> masks;
    for (const auto& stem : stems) {
        const std::string sim_dir = cfg.eval.ref_dir + "/" + stem + "_sim";
        const std::string real_dir = cfg.eval.ref_dir + "/" + stem + "_real";
        for (const std::string& d : {sim_dir, real_dir})
            if (!fs::is_directory(d))
                throw DataError("reference clip directory missing: " + d);
        gen.push_back(read_clip_dir(cfg.eval.gen_dir + "/" + stem + "_gen"));
        sim.push_back(read_clip_dir(sim_dir));
        real.push_back(read_clip_dir(real_dir));
        flows.push_back(read_clip_flow(sim_dir));
        masks.push_back(read_clip_masks(sim_dir));
    }

    HistogramEmbedder emb;
    // anchors: where real and sim frames sit on average in embedding space
    auto frame_anchor = [&](const std::vector<VideoClip>& clips) {
        Embedding sum(HistogramEmbedder::kDims, 0.0);
        long n = 0;
        for (const auto& c : clips)
            for (int t = 0; t < c.T; ++t) {
                const Embedding e = emb.embed(c, t, 0, 0, c.H, c.W);
                for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += e[i];
                ++n;
            }
        for (auto& v : sum) v /= n;
        return normalized(sum);
    };
    const Embedding t_p = frame_anchor(real), t_n = frame_anchor(sim);

    double ratio = 0.0, warp = 0.0, miou = 0.0, mse_sim = 0.0, mse_real = 0.0;
    long frames = 0;
    std::vector<double> iou_sum(palette_size() + 1, 0.0);
    std::vector<long> iou_n(palette_size() + 1, 0);
    for (std::size_t i = 0; i < gen.size(); ++i) {
        for (int t = 0; t < gen[i].T; ++t) {
            ratio += clip_real(emb.embed(gen[i], t, 0, 0, gen[i].H, gen[i].W), t_p, t_n);
            ++frames;
        }
        warp += warp_ssim(gen[i], flows[i]);
        const IoUReport rep = mask_consistency(gen[i], masks[i]);
        miou += rep.miou;
        for (std::size_t c = 0; c < rep.iou.size(); ++c)
            if (rep.present[c]) {
                iou_sum[c] += rep.iou[c];
                ++iou_n[c];
            }
        mse_sim += mse(gen[i], sim[i]);
        mse_real += mse(gen[i], real[i]);
    }
    const double n_clips = static_cast<double>(gen.size());

    // patch pairing is anchored on the sim layout, features measured on the
    // generated frames at the same grid positions
    PatchPairSet pairs = semantics_aware_pairs(sim, real, emb, cfg.eval.patch, cfg.eval.n_pairs,
                                               cfg.eval.seed);
    std::vector<Embedding> f_gen, f_real;
    f_gen.reserve(pairs.pairs.size());
    f_real.reserve(pairs.pairs.size());
    for (const auto& [g, r] : pairs.pairs) {
        f_gen.push_back(emb.embed(gen[g.clip], g.t, g.y0, g.x0, pairs.p, pairs.p));
        f_real.push_back(emb.embed(real[r.clip], r.t, r.y0, r.x0, pairs.p, pairs.p));
    }

    std::ostringstream rep;
    rep << "clip_real_x100\t" << ratio / frames * 100.0 << "\n";
    rep << "warp_ssim\t" << warp / n_clips << "\n";
    rep << "sfid\t" << fid(f_gen, f_real) << "\n";
    rep << "skid_x100\t" << kid(f_gen, f_real) << "\n";
    rep << "miou\t" << miou / n_clips << "\n";
    rep << "mse_to_sim\t" << mse_sim / n_clips << "\n";
    rep << "mse_to_real\t" << mse_real / n_clips << "\n";
    rep << "iou_per_class = {";
    bool first = true;
    for (std::size_t c = 0; c < iou_sum.size(); ++c) {
        if (!iou_n[c]) continue;
        rep << (first ? " " : ", ") << "\"" << (c == 0 ? "background" : "color" + std::to_string(c))
            << "\": " << iou_sum[c] / iou_n[c];
        first = false;
    }
    rep << " }\n";

    std::cout << rep.str();
    std::ofstream out(cfg.eval.gen_dir + "/eval_report.txt", std::ios::trunc);
    out << rep.str();
    write_run_record(cfg.eval.gen_dir, cfg);
}

void cmd_shapes(const AppConfig& cfg) {
    ShapeQuery q;
    q.T = cfg.train.chunk_t;
    q.H = cfg.data.h;
    q.W = cfg.data.w;
    q.S = cfg.vfm.s;
    q.vfm_channels = cfg.vfm.channels;
    q.k_m = cfg.pca.k_m;
    q.aligner_hidden = cfg.aligner.hidden;
    q.cond_dim = cfg.aligner.out_channels;
    q.temporal_ratio = cfg.aligner.temporal_ratio;
    std::cout << format_shapes(dry_run_shapes(q));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paired sim-to-real toy video pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("-c,--config", config_path,
                   "config file (built-in desk-scale defaults when omitted)");

    CLI::App* c_gen = app.add_subcommand("gen", "generate the paired toy dataset");
    CLI::App* c_fit = app.add_subcommand("fit-pca", "fit the feature basis on real clips");
    CLI::App* c_pre =
        app.add_subcommand("pretrain", "pretrain the unconditional denoiser (frozen base)");

    CLI::App* c_train = app.add_subcommand("train", "train the control branch and aligner");
    std::string resume;
    c_train->add_option("--resume", resume, "checkpoint to continue from");

    CLI::App* c_infer = app.add_subcommand("infer", "translate a sim clip to the real domain");
    int k_flag = 0;
    std::uint64_t seed_flag = 0;
    bool long_mode = false;
    CLI::Option* k_opt = c_infer->add_option("--k", k_flag, "condition channels to keep");
    CLI::Option* seed_opt = c_infer->add_option("--seed", seed_flag, "sampling seed");
    c_infer->add_flag("--long", long_mode, "windowed translation for clips longer than a chunk");

    CLI::App* c_eval = app.add_subcommand("eval", "run the metric battery on translated clips");
    std::string gen_dir, ref_dir;
    c_eval->add_option("--gen-dir", gen_dir, "directory holding *_gen clip directories");
    c_eval->add_option("--ref-dir", ref_dir, "dataset directory with *_sim / *_real references");

    CLI::App* c_shapes = app.add_subcommand("shapes", "print per-stage tensor shapes, no weights");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        AppConfig cfg;
        if (!config_path.empty()) {
            cfg = load_config(config_path);
        } else {
            apply_env_overrides(cfg);
        }

        if (app.got_subcommand(c_gen)) cmd_gen(cfg);
        if (app.got_subcommand(c_fit)) cmd_fit_pca(cfg);
        if (app.got_subcommand(c_pre)) cmd_pretrain(cfg);
        if (app.got_subcommand(c_train)) cmd_train(cfg, resume);
        if (app.got_subcommand(c_infer)) {
            if (k_opt->count()) cfg.infer.k = k_flag;
            if (seed_opt->count()) cfg.infer.seed = seed_flag;
            cmd_infer(cfg, long_mode);
        }
        if (app.got_subcommand(c_eval)) {
            if (!gen_dir.empty()) cfg.eval.gen_dir = gen_dir;
            if (!ref_dir.empty()) cfg.eval.ref_dir = ref_dir;
            cmd_eval(cfg);
        }
        if (app.got_subcommand(c_shapes)) cmd_shapes(cfg);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
}
