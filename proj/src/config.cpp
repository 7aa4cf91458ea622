#include "s2r/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace s2r {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

int checked_int(const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw std::runtime_error("empty value, expected an integer");
    std::size_t pos = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("'" + v + "' is not an integer");
    }
    if (pos != v.size()) throw std::runtime_error("'" + v + "' is not an integer");
    if (x < INT32_MIN || x > INT32_MAX) throw std::runtime_error("'" + v + "' overflows int");
    return static_cast<int>(x);
}

std::uint64_t checked_u64(const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty() || v[0] == '-')
        throw std::runtime_error("'" + v + "' is not an unsigned integer");
    std::size_t pos = 0;
    std::uint64_t x = 0;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("'" + v + "' is not an unsigned integer");
    }
    if (pos != v.size()) throw std::runtime_error("'" + v + "' is not an unsigned integer");
    return x;
}

double checked_double(const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw std::runtime_error("empty value, expected a number");
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("'" + v + "' is not a number");
    }
    if (pos != v.size()) throw std::runtime_error("'" + v + "' is not a number");
    return x;
}

bool checked_bool(const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("'" + v + "' is not a boolean (true/false/1/0)");
}

std::vector<int> checked_int_list(const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw std::runtime_error("empty value, expected a comma-separated list");
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(checked_int(item));
    return out;
}

std::string print_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string print_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

struct FieldSpec {
    std::string section, key;
    std::function<void(AppConfig&, const std::string&)> parse;  // throws runtime_error
    std::function<std::string(const AppConfig&)> print;
};

// The single source of truth for the file format: every entry is one
// "key = value" line under its section and one SECTION_KEY env override.
#define INT_FIELD(sec, key, member)                                          \
    FieldSpec {                                                              \
        sec, key, [](AppConfig& c, const std::string& v) { c.member = checked_int(v); }, \
            [](const AppConfig& c) { return std::to_string(c.member); }      \
    }
#define U64_FIELD(sec, key, member)                                          \
    FieldSpec {                                                              \
        sec, key, [](AppConfig& c, const std::string& v) { c.member = checked_u64(v); }, \
            [](const AppConfig& c) { return std::to_string(c.member); }      \
    }
#define DBL_FIELD(sec, key, member)                                          \
    FieldSpec {                                                              \
        sec, key, [](AppConfig& c, const std::string& v) { c.member = checked_double(v); }, \
            [](const AppConfig& c) { return print_double(c.member); }        \
    }
#define BOOL_FIELD(sec, key, member)                                         \
    FieldSpec {                                                              \
        sec, key, [](AppConfig& c, const std::string& v) { c.member = checked_bool(v); }, \
            [](const AppConfig& c) { return c.member ? "true" : "false"; }   \
    }
#define STR_FIELD(sec, key, member)                                          \
    FieldSpec {                                                              \
        sec, key, [](AppConfig& c, const std::string& v) { c.member = trim(v); }, \
            [](const AppConfig& c) { return c.member; }                      \
    }
#define LIST_FIELD(sec, key, member)                                         \
    FieldSpec {                                                              \
        sec, key, [](AppConfig& c, const std::string& v) { c.member = checked_int_list(v); }, \
            [](const AppConfig& c) { return print_list(c.member); }          \
    }

const std::vector<FieldSpec>& registry() {
    static const std::vector<FieldSpec> fields = {
        STR_FIELD("data", "root", data.root),
        INT_FIELD("data", "clips", data.clips),
        INT_FIELD("data", "t", data.t),
        INT_FIELD("data", "h", data.h),
        INT_FIELD("data", "w", data.w),
        INT_FIELD("data", "objects", data.objects),
        DBL_FIELD("data", "motion_speed", data.motion_speed),
        U64_FIELD("data", "seed", data.seed),

        INT_FIELD("vfm", "channels", vfm.channels),
        INT_FIELD("vfm", "s", vfm.s),

        STR_FIELD("pca", "basis", pca.basis),
        INT_FIELD("pca", "k_m", pca.k_m),
        LIST_FIELD("pca", "candidates", pca.candidates),
        BOOL_FIELD("pca", "whiten", pca.whiten),
        INT_FIELD("pca", "fit_frames", pca.fit_frames),
        U64_FIELD("pca", "seed", pca.seed),

        INT_FIELD("aligner", "hidden", aligner.hidden),
        INT_FIELD("aligner", "out_channels", aligner.out_channels),
        INT_FIELD("aligner", "temporal_ratio", aligner.temporal_ratio),
        INT_FIELD("aligner", "temporal_kernel", aligner.temporal_kernel),

        INT_FIELD("dit", "depth", dit.depth),
        INT_FIELD("dit", "width", dit.width),
        INT_FIELD("dit", "heads", dit.heads),
        INT_FIELD("dit", "time_dim", dit.time_dim),
        DBL_FIELD("dit", "time_floor", dit.time_floor),

        INT_FIELD("control", "n", control.n),

        STR_FIELD("train", "out", train.out),
        STR_FIELD("train", "backbone", train.backbone),
        STR_FIELD("train", "resume", train.resume),
        INT_FIELD("train", "steps", train.steps),
        INT_FIELD("train", "pretrain_steps", train.pretrain_steps),
        INT_FIELD("train", "batch", train.batch),
        INT_FIELD("train", "chunk_t", train.chunk_t),
        INT_FIELD("train", "checkpoint_every", train.checkpoint_every),
        DBL_FIELD("train", "lr", train.lr),
        U64_FIELD("train", "seed", train.seed),

        STR_FIELD("infer", "checkpoint", infer.checkpoint),
        STR_FIELD("infer", "input", infer.input),
        STR_FIELD("infer", "out", infer.out),
        INT_FIELD("infer", "k", infer.k),
        INT_FIELD("infer", "steps", infer.steps),
        INT_FIELD("infer", "chunk_t", infer.chunk_t),
        U64_FIELD("infer", "seed", infer.seed),

        STR_FIELD("eval", "gen_dir", eval.gen_dir),
        STR_FIELD("eval", "ref_dir", eval.ref_dir),
        INT_FIELD("eval", "patch", eval.patch),
        INT_FIELD("eval", "n_pairs", eval.n_pairs),
        U64_FIELD("eval", "seed", eval.seed),
    };
    return fields;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DBL_FIELD
#undef BOOL_FIELD
#undef STR_FIELD
#undef LIST_FIELD

bool known_section(const std::string& name) {
    for (const auto& f : registry())
        if (f.section == name) return true;
    return false;
}

const FieldSpec* find_field(const std::string& section, const std::string& key) {
    for (const auto& f : registry())
        if (f.section == section && f.key == key) return &f;
    return nullptr;
}

void parse_into(AppConfig& cfg, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::string where = source + ":" + std::to_string(lineno);
        if (t[0] == '[') {
            if (t.back() != ']')
                throw ConfigError(where + ": malformed section header '" + t + "'");
            section = trim(t.substr(1, t.size() - 2));
            if (!known_section(section))
                throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected 'key = value', got '" + t + "'");
        if (section.empty())
            throw ConfigError(where + ": key outside any [section]");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = t.substr(eq + 1);
        const FieldSpec* f = find_field(section, key);
        if (!f)
            throw ConfigError(where + ": unknown key '" + key + "' in section [" + section + "]");
        try {
            f->parse(cfg, value);
        } catch (const std::runtime_error& e) {
            throw ConfigError(where + ": bad value for '" + key + "' in section [" + section +
                              "]: " + e.what());
        }
    }
}

}  // namespace

AppConfig parse_config_text(const std::string& text, const std::string& source) {
    AppConfig cfg;
    parse_into(cfg, text, source);
    return cfg;
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    AppConfig cfg = parse_config_text(ss.str(), path);
    apply_env_overrides(cfg);
    return cfg;
}

void apply_env_overrides(AppConfig& cfg) {
    for (const auto& f : registry()) {
        const std::string var = env_var_name(f.section, f.key);
        const char* v = std::getenv(var.c_str());
        if (!v) continue;
        try {
            f.parse(cfg, v);
        } catch (const std::runtime_error& e) {
            throw ConfigError("bad value in environment variable " + var + ": " + e.what());
        }
    }
}

std::string serialize_config(const AppConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : registry()) {
        if (f.section != section) {
            if (!section.empty()) out += "\n";
            out += "[" + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.print(cfg) + "\n";
    }
    return out;
}

std::string env_var_name(const std::string& section, const std::string& key) {
    std::string out;
    for (char c : section + "_" + key)
        out += std::isalnum(static_cast<unsigned char>(c))
                   ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                   : '_';
    return out;
}

void require_key(const std::string& value, const std::string& key, const std::string& section) {
    if (value.empty())
        throw ConfigError("missing required key '" + key + "' in section [" + section + "]");
}

PipelineConfig pipeline_config(const AppConfig& cfg) {
    PipelineConfig p;
    p.vfm_channels = cfg.vfm.channels;
    p.S = cfg.vfm.s;
    p.whiten = cfg.pca.whiten;
    p.aligner.hidden = cfg.aligner.hidden;
    p.aligner.out_channels = cfg.aligner.out_channels;
    p.aligner.temporal_ratio = cfg.aligner.temporal_ratio;
    p.aligner.temporal_kernel = cfg.aligner.temporal_kernel;
    p.dit.depth = cfg.dit.depth;
    p.dit.width = cfg.dit.width;
    p.dit.heads = cfg.dit.heads;
    p.dit.time_dim = cfg.dit.time_dim;
    p.dit.time_floor = cfg.dit.time_floor;
    p.control.N = cfg.control.n;
    return p;
}

TrainConfig train_config(const AppConfig& cfg) {
    TrainConfig t;
    t.steps = cfg.train.steps;
    t.lr = cfg.train.lr;
    t.batch = cfg.train.batch;
    t.chunk_T = cfg.train.chunk_t;
    t.checkpoint_every = cfg.train.checkpoint_every;
    t.seed = cfg.train.seed;
    t.tail_drop.candidates = cfg.pca.candidates;
    return t;
}

SceneSpec scene_spec(const AppConfig& cfg, int index) {
    SceneSpec s;
    s.seed = cfg.data.seed + static_cast<std::uint64_t>(index);
    s.T = cfg.data.t;
    s.H = cfg.data.h;
    s.W = cfg.data.w;
    s.num_objects = cfg.data.objects;
    s.motion_speed = cfg.data.motion_speed;
    return s;
}

std::string git_describe() {
    FILE* pipe = ::popen("git describe --always --dirty 2>/dev/null", "r");
    if (!pipe) return "unknown";
    char buf[256];
    std::string out;
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    ::pclose(pipe);
    const std::string t = trim(out);
    return t.empty() ? "unknown" : t;
}

void write_run_record(const std::string& dir, const AppConfig& cfg) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/run.txt";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "# resolved settings for the outputs in this directory\n";
    out << "# source revision: " << git_describe() << "\n\n";
    out << serialize_config(cfg);
}

}  // namespace s2r
