#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2r/scenegen.hpp"
#include "s2r/train.hpp"

namespace s2r {

// Everything a run needs, in one plain struct.  The field registry in
// config.cpp is the single source of truth for names: each member maps to
// "key = value" under its section in the config file, and to the environment
// variable SECTION_KEY (upper-cased, e.g. [train] lr -> TRAIN_LR).  Built-in
// defaults are the desk-scale setup that runs end to end on a workstation;
// configs/full.cfg mirrors the reference-scale numbers.
struct AppConfig {
    struct Data {
        std::string root = "runs/dataset";
        int clips = 8;
        int t = 17, h = 64, w = 64;
        int objects = 2;
        double motion_speed = 1.0;
        std::uint64_t seed = 0;
    } data;

    struct Vfm {
        int channels = 64;
        int s = 1;  // spatial oversampling before feature extraction
    } vfm;

    struct Pca {
        std::string basis = "runs/basis.pcab";
        int k_m = 32;
        std::vector<int> candidates = {3, 8, 16, 32};
        bool whiten = true;
        int fit_frames = 64;  // frames sampled across the dataset for fitting
        std::uint64_t seed = 0;
    } pca;

    struct Aligner {
        int hidden = 64;
        int out_channels = 64;
        int temporal_ratio = 4;
        int temporal_kernel = 5;
    } aligner;

    struct Dit {
        int depth = 8;
        int width = 64;
        int heads = 4;
        int time_dim = 32;
        double time_floor = 0.02;
    } dit;

    struct Control {
        int n = 2;  // clone/inject interval: every n-th denoiser block
    } control;

    struct Train {
        std::string out = "runs/train";
        std::string backbone;  // optional pretrained denoiser checkpoint
        std::string resume;    // optional checkpoint to continue from
        int steps = 2000;
        int pretrain_steps = 800;
        int batch = 1;
        int chunk_t = 17;
        int checkpoint_every = 500;
        double lr = 5e-5;
        std::uint64_t seed = 0;
    } train;

    struct Infer {
        std::string checkpoint;
        std::string input;  // directory of a rendered sim clip
        std::string out = "runs/infer";
        int k = 8;
        int steps = 20;
        int chunk_t = 93;  // translate_long window length
        std::uint64_t seed = 0;
    } infer;

    struct Eval {
        std::string gen_dir;
        std::string ref_dir;
        int patch = 16;
        int n_pairs = 2000;
        std::uint64_t seed = 0;
    } eval;
};

// Parses sectioned "key = value" text.  Lines starting with '#' and blank
// lines are skipped.  Unknown sections and unknown keys are ConfigErrors
// naming both; so are malformed values (named by section and key).  `source`
// labels error messages (a file name or "<inline>").
AppConfig parse_config_text(const std::string& text, const std::string& source);

// Reads the file, parses it over the defaults, then applies environment
// overrides.  ConfigError if the file cannot be read.
AppConfig load_config(const std::string& path);

// Environment overrides for every registered field: SECTION_KEY (upper-case,
// non-alphanumerics mapped to '_').  Parse errors name the variable.
void apply_env_overrides(AppConfig& cfg);

// Canonical text form: every section, every key, in registry order.  Parsing
// the output reproduces the config exactly (round-trip law), so it doubles
// as the resolved-settings block of run.txt.
std::string serialize_config(const AppConfig& cfg);

// The override variable for one field, e.g. ("train", "lr") -> "TRAIN_LR".
std::string env_var_name(const std::string& section, const std::string& key);

// ConfigError naming the key and section unless the string field is set.
void require_key(const std::string& value, const std::string& key, const std::string& section);

// --- wiring into the module configs ---

PipelineConfig pipeline_config(const AppConfig& cfg);
TrainConfig train_config(const AppConfig& cfg);
// spec of dataset clip `index` (seeds advance one per clip)
SceneSpec scene_spec(const AppConfig& cfg, int index);

// "git describe --always --dirty" of the working tree, "unknown" when git is
// unavailable.
std::string git_describe();

// Writes <dir>/run.txt: resolved config, seeds included, plus the source
// revision, so any output directory records how it was produced.
void write_run_record(const std::string& dir, const AppConfig& cfg);

}  // namespace s2r
