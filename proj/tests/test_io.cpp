#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qfc/hashing.hpp"
#include "qfc/io.hpp"

using namespace qfc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "qfc_io_test";
    fs::create_directories(dir);
    return dir;
}

std::string tiny_config_json(const std::string& extra_model_key = "",
                             const std::string& drop_key = "") {
    std::string model = R"("kappa_f": 0.7071067811865476,
    "kappa_s": 0.7071067811865476,
    "a": 1.0, "b": 0.5, "c": 1.0, "mu": 0.1, "eta": 1.0,
    "T": 0.5, "dt": 0.005, "u_max": 5.0,
    "initial_bloch": [0.0, 0.0, 1.0])";
    if (!extra_model_key.empty()) model += ",\n    \"" + extra_model_key + "\": 1.0";
    std::string s = R"({
  "model": { )" + model + R"( },
  "dp": { "nx": 21, "ny": 21, "nz": 21, "dt": 0.005, "control_n": 17,
          "search_stride": 4, "refine": true, "terminal": "linear-c",
          "value_stride": 20, "policy_stride": 5 },
  "mc": { "n_paths": 50, "master_seed": 7 },
  "outputs": { "dir": "out" }
})";
    if (!drop_key.empty()) {
        const auto pos = s.find("\"" + drop_key + "\":");
        REQUIRE(pos != std::string::npos);
        const auto comma = s.find(',', pos);
        s.erase(pos, comma - pos + 1);
    }
    return s;
}

std::string write_file(const std::string& name, const std::string& content) {
    const fs::path p = scratch_dir() / name;
    std::ofstream out(p);
    out << content;
    return p.string();
}

DpResult tiny_solve() {
    TwoLevelParams p;
    p.T = 0.25;
    DpGridConfig g;
    g.nx = g.ny = g.nz = 21;
    g.dt = 5e-3;
    g.control_n = 17;
    g.search_stride = 4;
    g.value_stride = 10;
    g.policy_stride = 5;
    return rs_backward_solve(p, g);
}

}  // namespace

TEST_CASE("config load: happy path, hash stability") {
    const std::string path = write_file("ok.json", tiny_config_json());
    const RunConfig a = load_config(path);
    const RunConfig b = load_config(path);
    CHECK(a.config_hash == b.config_hash);
    CHECK(a.model.T == 0.5);
    CHECK(a.n_paths == 50);
    CHECK(a.out_dir == "out");
    CHECK(a.initial_bloch == Eigen::Vector3d(0, 0, 1));
}

TEST_CASE("config load: unknown key is rejected with its path") {
    const std::string path =
        write_file("unknown.json", tiny_config_json("decoherence_rate"));
    try {
        load_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.decoherence_rate") !=
              std::string::npos);
    }
}

TEST_CASE("config load: missing key is rejected with its path") {
    const std::string path =
        write_file("missing.json", tiny_config_json("", "eta"));
    try {
        load_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.eta") != std::string::npos);
    }
}

TEST_CASE("config load: non-integer T/dt is rounded with adjustment") {
    std::string s = tiny_config_json();
    const auto pos = s.find("\"dt\": 0.005");
    s.replace(pos, 11, "\"dt\": 0.0052");
    const std::string path = write_file("rounded.json", s);
    const RunConfig cfg = load_config(path);
    const double ratio = cfg.model.T / cfg.model.dt;
    CHECK(std::abs(ratio - std::llround(ratio)) < 1e-9);
}

TEST_CASE("config load: malformed json and bad values") {
    CHECK_THROWS_AS(load_config(write_file("bad.json", "{ not json")), ConfigError);
    std::string s = tiny_config_json();
    auto pos = s.find("\"b\": 0.5");
    s.replace(pos, 8, "\"b\": 0.0");
    CHECK_THROWS_AS(load_config(write_file("badb.json", s)), ConfigError);
    s = tiny_config_json();
    pos = s.find("[0.0, 0.0, 1.0]");
    s.replace(pos, 15, "[0.0, 0.0, 1.5]");
    CHECK_THROWS_AS(load_config(write_file("badbloch.json", s)), ConfigError);
}

TEST_CASE("value grid and policy round-trip bitwise") {
    const DpResult res = tiny_solve();
    const fs::path dir = scratch_dir();

    const std::string vpath = (dir / "v.qfcg").string();
    save_value_grid(vpath, res.value, 0xabcdef);
    const ValueGrid v = load_value_grid(vpath);
    REQUIRE(v.values.size() == res.value.values.size());
    for (std::size_t i = 0; i < v.values.size(); ++i)
        CHECK(v.values[i] == res.value.values[i]);
    REQUIRE(v.times.size() == res.value.times.size());
    CHECK(v.mode == res.value.mode);
    CHECK(v.params.mu == res.value.params.mu);
    CHECK(v.dt_dp == res.value.dt_dp);

    const std::string ppath = (dir / "p.qfcg").string();
    save_policy(ppath, res.policy, 0xabcdef);
    const Policy p = load_policy(ppath);
    REQUIRE(p.u_re.size() == res.policy.u_re.size());
    for (std::size_t i = 0; i < p.u_re.size(); ++i) {
        CHECK(p.u_re[i] == res.policy.u_re[i]);
        CHECK(p.u_im[i] == res.policy.u_im[i]);
    }
    CHECK(p.provenance == res.policy.provenance);

    // Saving again yields the identical content hash (determinism).
    const std::string vpath2 = (dir / "v2.qfcg").string();
    save_value_grid(vpath2, res.value, 0xabcdef);
    CHECK(container_content_hash(vpath) == container_content_hash(vpath2));
    CHECK(container_model_hash(ppath) == model_hash(res.policy.params));
}

TEST_CASE("containers reject corruption and kind mismatch") {
    const DpResult res = tiny_solve();
    const fs::path dir = scratch_dir();
    const std::string vpath = (dir / "corrupt.qfcg").string();
    save_value_grid(vpath, res.value, 1);

    // Flip one payload byte.
    std::fstream f(vpath, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-9, std::ios::end);
    char c;
    f.read(&c, 1);
    f.seekp(-9, std::ios::end);
    c = static_cast<char>(c ^ 0x40);
    f.write(&c, 1);
    f.close();
    CHECK_THROWS_AS(load_value_grid(vpath), ArtifactError);

    const std::string ppath = (dir / "kind.qfcg").string();
    save_policy(ppath, res.policy, 1);
    CHECK_THROWS_AS(load_value_grid(ppath), ArtifactError);
    CHECK_THROWS_AS(load_policy((dir / "v2.qfcg").string()), ArtifactError);
}

TEST_CASE("cost report rendering is deterministic and omits wall time") {
    CostReport r;
    r.estimator_id = "rs-ref";
    r.estimate = 1.25;
    r.standard_error = 0.01;
    r.n_paths = 100;
    r.seed = 7;
    r.model_hash = 0x123;
    r.wall_time_s = 3.14159;  // varies between runs; must not be serialized
    r.saturation_count = 0;
    const std::string a = render_cost_report(r, 0x456);
    r.wall_time_s = 99.9;
    const std::string b = render_cost_report(r, 0x456);
    CHECK(a == b);
    CHECK(a.find("wall") == std::string::npos);
    CHECK(a.find("rs-ref") != std::string::npos);
}

TEST_CASE("atomic_write creates parents and replaces content") {
    const fs::path dir = scratch_dir() / "nested" / "deeper";
    const std::string path = (dir / "x.txt").string();
    atomic_write(path, "first");
    atomic_write(path, "second");
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    CHECK(content == "second");
    CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("trajectory and table writers embed the config hash") {
    const std::string cfg_path = write_file("cfg.json", tiny_config_json());
    RunConfig cfg = load_config(cfg_path);
    cfg.out_dir = (scratch_dir() / "outdir").string();

    const ModelSpec spec = two_level_model(cfg.model);
    const StateMatrix pi0(CMatrix(proj_up()), true);
    std::vector<TrajectoryRecord> recs;
    recs.push_back(run_closed_loop(
        spec, pi0, ControllerHandle::constant(Complex(0, 0), cfg.model),
        NoiseStream(cfg.master_seed, 0)));
    const std::string tpath = (fs::path(cfg.out_dir) / "traj.csv").string();
    write_trajectories(tpath, recs, cfg);

    std::ifstream in(tpath);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    CHECK(content.find(hex64(cfg.config_hash)) != std::string::npos);
    // Header plus one line per step.
    const std::size_t lines = std::count(content.begin(), content.end(), '\n');
    CHECK(lines == 4 + recs[0].y_increments.size());
}
