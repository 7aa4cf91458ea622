#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "s2r/config.hpp"

using namespace s2r;
namespace fs = std::filesystem;

namespace {

// tests run from the build tree; walk up until the shipped configs appear
std::string repo_file(const std::string& rel) {
    fs::path dir = fs::current_path();
    for (int i = 0; i < 6; ++i) {
        if (fs::exists(dir / rel)) return (dir / rel).string();
        dir = dir.parent_path();
    }
    FAIL("cannot locate ", rel, " above ", fs::current_path().string());
    return rel;
}

AppConfig parse(const std::string& text) { return parse_config_text(text, "mem"); }

struct EnvGuard {
    std::string name;
    EnvGuard(const std::string& n, const std::string& v) : name(n) {
        setenv(n.c_str(), v.c_str(), 1);
    }
    ~EnvGuard() { unsetenv(name.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults describe the desk-scale run") {
    const AppConfig c;
    CHECK(c.data.root == "runs/dataset");
    CHECK(c.data.clips == 8);
    CHECK(c.data.t == 17);
    CHECK(c.data.h == 64);
    CHECK(c.data.w == 64);
    CHECK(c.vfm.channels == 64);
    CHECK(c.vfm.s == 1);
    CHECK(c.pca.k_m == 32);
    CHECK(c.pca.candidates == std::vector<int>{3, 8, 16, 32});
    CHECK(c.pca.whiten);
    CHECK(c.aligner.temporal_ratio == 4);
    CHECK(c.dit.depth == 8);
    CHECK(c.dit.time_floor == doctest::Approx(0.02));
    CHECK(c.control.n == 2);
    CHECK(c.train.steps == 2000);
    CHECK(c.train.lr == doctest::Approx(5e-5));
    CHECK(c.train.chunk_t == 17);
    CHECK(c.infer.k == 8);
    CHECK(c.infer.steps == 20);
    CHECK(c.eval.patch == 16);
    CHECK(c.eval.n_pairs == 2000);
}

TEST_CASE("serialize/parse round-trip is a fixed point") {
    AppConfig c;
    SUBCASE("defaults") {}
    SUBCASE("mutated fields of every type") {
        c.data.root = "/tmp/else where";  // embedded space survives
        c.data.clips = 3;
        c.data.motion_speed = 1.75;
        c.data.seed = 0xdeadbeefULL;
        c.vfm.s = 4;
        c.pca.whiten = false;
        c.pca.candidates = {1, 2, 30};
        c.aligner.hidden = 16;
        c.dit.time_floor = 1.0 / 3.0;  // not exactly representable in decimal
        c.train.lr = 7e-4;
        c.train.resume = "runs/train/control/ckpt_000500.s2rc";
        c.infer.chunk_t = 93;
        c.eval.gen_dir = "runs/infer";
    }
    const std::string s1 = serialize_config(c);
    const AppConfig back = parse_config_text(s1, "roundtrip");
    const std::string s2 = serialize_config(back);
    CHECK(s1 == s2);
    CHECK(back.data.root == c.data.root);
    CHECK(back.data.motion_speed == c.data.motion_speed);  // bitwise, via %.17g
    CHECK(back.dit.time_floor == c.dit.time_floor);
    CHECK(back.train.lr == c.train.lr);
    CHECK(back.pca.candidates == c.pca.candidates);
    CHECK(back.data.seed == c.data.seed);
}

TEST_CASE("shipped config files parse and pin their scales") {
    const AppConfig desk = load_config(repo_file("configs/desk.cfg"));
    CHECK(desk.data.t == 17);
    CHECK(desk.data.h == 64);
    CHECK(desk.vfm.s == 1);
    // desk.cfg pre-wires the stage outputs into the next stage's inputs
    CHECK(desk.train.backbone == "runs/train/pretrain/ckpt_final.s2rc");
    CHECK(desk.infer.checkpoint == "runs/train/control/ckpt_final.s2rc");
    CHECK(desk.infer.input == "runs/dataset/c000_sim");

    const AppConfig full = load_config(repo_file("configs/full.cfg"));
    CHECK(full.data.t == 93);
    CHECK(full.data.h == 704);
    CHECK(full.data.w == 1280);
    CHECK(full.vfm.s == 4);
    CHECK(full.train.chunk_t == 93);
    CHECK(full.infer.chunk_t == 93);
    CHECK(full.eval.n_pairs == 400000);
    CHECK(full.pca.fit_frames == 256);
}

TEST_CASE("parse errors name the key, section, and line") {
    // unknown key, known section
    CHECK_THROWS_WITH_AS(parse("[data]\nclisp = 8\n"),
                         "mem:2: unknown key 'clisp' in section [data]", ConfigError);
    // unknown section
    CHECK_THROWS_WITH_AS(parse("[dita]\n"), "mem:1: unknown section [dita]", ConfigError);
    // malformed header
    CHECK_THROWS_WITH_AS(parse("[data\n"), "mem:1: malformed section header '[data'",
                         ConfigError);
    // key before any section
    CHECK_THROWS_WITH_AS(parse("clips = 8\n"), "mem:1: key outside any [section]", ConfigError);
    // not key = value
    CHECK_THROWS_WITH_AS(parse("[data]\nclips\n"), "mem:2: expected 'key = value', got 'clips'",
                         ConfigError);
    // bad int, line number past comments and blanks
    CHECK_THROWS_WITH_AS(
        parse("# hi\n\n[data]\nclips = soon\n"),
        "mem:4: bad value for 'clips' in section [data]: 'soon' is not an integer", ConfigError);
    // bad bool
    CHECK_THROWS_WITH_AS(
        parse("[pca]\nwhiten = maybe\n"),
        "mem:2: bad value for 'whiten' in section [pca]: 'maybe' is not a boolean (true/false/1/0)",
        ConfigError);
    // bad list element
    CHECK_THROWS_AS(parse("[pca]\ncandidates = 3,x,16\n"), ConfigError);
    // trailing garbage on a number
    CHECK_THROWS_AS(parse("[train]\nlr = 1e-3abc\n"), ConfigError);
    // int overflow
    CHECK_THROWS_AS(parse("[data]\nclips = 99999999999\n"), ConfigError);
    // negative unsigned seed
    CHECK_THROWS_AS(parse("[data]\nseed = -1\n"), ConfigError);
}

TEST_CASE("comments, blank lines, CRLF, and spacing are tolerated") {
    const AppConfig c = parse(
        "# leading comment\r\n"
        "\r\n"
        "  # indented comment\n"
        "[data]\r\n"
        "  clips   =  5  \r\n"
        "[train]\n"
        "lr=0.5\n");
    CHECK(c.data.clips == 5);
    CHECK(c.train.lr == 0.5);
    // '#' opens a comment only at line start; after 'key =' the rest of the
    // line is the value, so trailing annotations on a number are an error
    CHECK_THROWS_AS(parse("[data]\nclips = 5 # five\n"), ConfigError);
}

TEST_CASE("environment overrides win over file values and report bad input") {
    AppConfig c;
    {
        EnvGuard g1("TRAIN_LR", "0.25");
        EnvGuard g2("PCA_CANDIDATES", "4,5");
        EnvGuard g3("DATA_ROOT", "/tmp/envroot");
        EnvGuard g4("PCA_WHITEN", "false");
        apply_env_overrides(c);
        CHECK(c.train.lr == 0.25);
        CHECK(c.pca.candidates == std::vector<int>{4, 5});
        CHECK(c.data.root == "/tmp/envroot");
        CHECK_FALSE(c.pca.whiten);
    }
    {
        EnvGuard g("DIT_DEPTH", "eight");
        AppConfig d;
        CHECK_THROWS_WITH_AS(apply_env_overrides(d),
                             "bad value in environment variable DIT_DEPTH: 'eight' is not an "
                             "integer",
                             ConfigError);
    }
    // guards removed: a fresh pass changes nothing
    AppConfig e;
    apply_env_overrides(e);
    CHECK(e.train.lr == doctest::Approx(5e-5));
}

TEST_CASE("load_config layers file then environment") {
    const fs::path dir = fs::temp_directory_path() / "s2r_config_load";
    fs::create_directories(dir);
    const std::string path = (dir / "t.cfg").string();
    std::ofstream(path) << "[data]\nclips = 4\nt = 9\n";
    {
        EnvGuard g("DATA_CLIPS", "6");
        const AppConfig c = load_config(path);
        CHECK(c.data.clips == 6);  // env beats file
        CHECK(c.data.t == 9);      // file beats default
    }
    CHECK_THROWS_WITH_AS(load_config((dir / "absent.cfg").string()),
                         ("cannot read config file '" + (dir / "absent.cfg").string() + "'").c_str(),
                         ConfigError);
}

TEST_CASE("env_var_name and require_key follow the documented forms") {
    CHECK(env_var_name("pca", "k_m") == "PCA_K_M");
    CHECK(env_var_name("train", "lr") == "TRAIN_LR");
    CHECK(env_var_name("data", "motion_speed") == "DATA_MOTION_SPEED");
    CHECK_THROWS_WITH_AS(require_key("", "checkpoint", "infer"),
                         "missing required key 'checkpoint' in section [infer]", ConfigError);
    CHECK_NOTHROW(require_key("x", "checkpoint", "infer"));
}

TEST_CASE("pipeline/train/scene views carry the right fields") {
    AppConfig c;
    c.vfm.channels = 24;
    c.vfm.s = 2;
    c.pca.whiten = false;
    c.pca.candidates = {2, 7};
    c.aligner.hidden = 16;
    c.aligner.out_channels = 40;
    c.aligner.temporal_ratio = 4;
    c.aligner.temporal_kernel = 3;
    c.dit.depth = 6;
    c.dit.width = 48;
    c.dit.heads = 3;
    c.dit.time_dim = 24;
    c.dit.time_floor = 0.05;
    c.control.n = 3;
    c.train.steps = 11;
    c.train.lr = 0.125;
    c.train.batch = 2;
    c.train.chunk_t = 9;
    c.train.seed = 77;
    c.train.checkpoint_every = 4;
    c.data.objects = 5;
    c.data.t = 13;
    c.data.h = 32;
    c.data.w = 48;
    c.data.motion_speed = 2.5;
    c.data.seed = 100;

    const PipelineConfig p = pipeline_config(c);
    CHECK(p.vfm_channels == 24);
    CHECK(p.S == 2);
    CHECK_FALSE(p.whiten);
    CHECK(p.aligner.hidden == 16);
    CHECK(p.aligner.out_channels == 40);
    CHECK(p.aligner.temporal_kernel == 3);
    CHECK(p.dit.depth == 6);
    CHECK(p.dit.width == 48);
    CHECK(p.dit.heads == 3);
    CHECK(p.dit.time_dim == 24);
    CHECK(p.dit.time_floor == 0.05);
    CHECK(p.control.N == 3);

    const TrainConfig t = train_config(c);
    CHECK(t.steps == 11);
    CHECK(t.lr == 0.125);
    CHECK(t.batch == 2);
    CHECK(t.chunk_T == 9);
    CHECK(t.seed == 77);
    CHECK(t.checkpoint_every == 4);
    CHECK(t.tail_drop.candidates == std::vector<int>{2, 7});

    const SceneSpec s3 = scene_spec(c, 3);
    CHECK(s3.seed == 103);
    CHECK(s3.num_objects == 5);
    CHECK(s3.T == 13);
    CHECK(s3.H == 32);
    CHECK(s3.W == 48);
    CHECK(s3.motion_speed == 2.5);
    CHECK(scene_spec(c, 0).seed == 100);
}

TEST_CASE("write_run_record resolves settings, seeds, and revision") {
    const fs::path dir = fs::temp_directory_path() / "s2r_config_runrec";
    fs::remove_all(dir);
    fs::create_directories(dir);
    AppConfig c;
    c.train.seed = 1234;
    write_run_record(dir.string(), c);
    std::ifstream in(dir / "run.txt");
    REQUIRE(in.good());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("# source revision:") != std::string::npos);
    CHECK(text.find("[train]") != std::string::npos);
    CHECK(text.find("seed = 1234") != std::string::npos);
    // the body after the comment banner is itself a loadable config
    const std::string body = text.substr(text.find("\n[") + 1);
    const AppConfig back = parse_config_text(body, "runrec");
    CHECK(back.train.seed == 1234);
    CHECK(serialize_config(back) == serialize_config(c));
}

TEST_SUITE_END();
