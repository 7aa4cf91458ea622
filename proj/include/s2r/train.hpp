#pragma once

#include <memory>
#include <string>
#include <vector>

#include "s2r/aligner.hpp"
#include "s2r/checkpoint.hpp"
#include "s2r/control.hpp"
#include "s2r/dit.hpp"
#include "s2r/pca.hpp"
#include "s2r/scenegen.hpp"
#include "s2r/vfm.hpp"

namespace s2r {

struct TrainConfig {
    int steps = 2000;
    double lr = 1e-3;  // desk-scale default; the full-scale config uses 5e-5
    int batch = 1;
    int chunk_T = 17;          // temporal crop length, must be 1 mod 4
    TailDropPolicy tail_drop;  // defaults to uniform over {3, 8, 16, 32}
    std::uint64_t seed = 0;
    int checkpoint_every = 500;

    TrainConfig() { tail_drop.candidates = {3, 8, 16, 32}; }
    void validate(int temporal_ratio) const;
};

// Hyper-parameters of the conditioned-generation stack.  Data-dependent
// fields (token grid, feature channel counts) are derived at build time.
struct PipelineConfig {
    int vfm_channels = 64;
    int S = 1;            // input-space oversampling before feature extraction
    bool whiten = true;   // scale projected channels to unit variance
    AlignerConfig aligner;
    DiTConfig dit;
    ControlConfig control;
};

// The wired stack.  `branch`/`aligner` stay null for an unconditional
// (backbone-only) build; `params` owns every leaf, models hold shared handles,
// so the struct is movable.
struct Pipeline {
    PipelineConfig cfg;
    PCABasis basis;  // C == 0 when unconditional
    ParamStore params;
    std::unique_ptr<VFMBackend> vfm;
    std::unique_ptr<DiT> dit;
    std::unique_ptr<ControlBranch> branch;
    std::unique_ptr<Aligner> aligner;

    bool conditioned() const { return branch != nullptr; }
};

// Builds denoiser (+ branch + aligner when `basis` is given) with fresh
// parameters drawn from Rng(hash_u64(seed ^ hash_u64(0))) -- the step stream
// is 1-based, so stream 0 is reserved for initialization.  When `backbone` is
// given it is restored into the denoiser BEFORE the branch clones it, so the
// branch always starts from the weights it will be injected into.  Derived
// wiring: dit token grid from (H, W, chunk_T); aligner in_channels from the
// basis k_m and its S from cfg.S; control cond_dim from aligner out_channels.
Pipeline build_pipeline(const PipelineConfig& cfg, int H, int W, int chunk_T,
                        std::uint64_t seed, const PCABasis* basis,
                        const TrainCheckpoint* backbone);

// extract_features -> project -> (whiten): the pre-mask conditioning grid,
// channels = basis.k_m.
FeatureGrid condition_features(const Pipeline& p, const VideoClip& clip);

// masked grid -> condition latent [t_lat, h, w, D] with the autograd graph
// attached, so training reaches the aligner parameters.
ad::Var condition_var(const Pipeline& p, const FeatureGrid& masked);

// fnv1a over (name, raw values) of every parameter whose name starts with
// `prefix`, in registration order.
std::uint64_t hash_group(const ParamStore& params, const std::string& prefix);

// flips requires_grad on every parameter under `prefix`
void set_group_trainable(ParamStore& params, const std::string& prefix, bool trainable);

// parameters currently marked trainable, in registration order
std::vector<ad::Var> trainable_params(const ParamStore& params);

struct LoadedClip {
    std::string id;
    VideoClip video;
};

// Clips whose manifest id ends in `suffix` ("_real" for training, "_sim" for
// translation inputs).  DataError when the manifest is missing or no clip
// matches.
std::vector<LoadedClip> load_clips_with_suffix(const std::string& data_root,
                                               const std::string& suffix);

// Contiguous window of length T, start uniform over [0, clip.T - T] (one rng
// draw, also when the window is the whole clip).  DataError if clip.T < T.
VideoClip random_crop_chunk(const VideoClip& clip, int T, Rng& rng);

struct StepResult {
    double loss = 0.0;
    int k = 0;  // sampled tail-drop truncation; 0 on the unconditional phase
    std::size_t clip_index = 0;
    std::string clip_id;
};

// One optimizer update.  All randomness comes from
// Rng(hash_u64(cfg.seed ^ hash_u64(step))) with `step` 1-based, drawn in this
// order: per batch item a clip index and a crop start, then the tail-drop k
// (conditioned stacks only), then each item's rectified-flow (t, eps).  A
// non-finite loss raises NumericError naming the step and the offending clip.
StepResult train_step(Pipeline& p, Adam& opt, const std::vector<LoadedClip>& clips,
                      const TrainConfig& cfg, std::uint64_t step);

enum class TrainMode {
    backbone,  // unconditional denoiser pretraining (stand-in for the frozen base model)
    control,   // branch + aligner on real clips, denoiser frozen
};

struct TrainRun {
    std::string final_checkpoint;
    std::uint64_t start_step = 0;   // 0 fresh, checkpoint step on resume
    std::vector<double> losses;     // one entry per executed step
    std::vector<int> ks;
};

// Full loop: loads "_real" clips from `data_root`, runs `cfg.steps` steps,
// appends "step\tloss\tk" lines to <out_dir>/train_log.txt, writes S2RC
// checkpoints at every multiple of checkpoint_every plus the final step, and
// returns the path of the last one.  Control mode loads the basis from
// `pca_path` (and `backbone_path` into the denoiser when given), freezes
// "dit.", and optimizes the rest.  `resume_path` restores parameters,
// optimizer state and step counter; the run then continues at step+1 and
// reproduces the uninterrupted run bit for bit. Errors: ConfigError on a seed
// mismatch with the resume checkpoint, DataError if the basis file changed
// since the checkpoint was written.
TrainRun train(TrainMode mode, const TrainConfig& cfg, const PipelineConfig& pcfg,
               const std::string& data_root, const std::string& pca_path,
               const std::string& out_dir, const std::string& backbone_path = "",
               const std::string& resume_path = "");

}  // namespace s2r
