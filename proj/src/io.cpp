#include "qfc/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qfc/hashing.hpp"

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

namespace qfc {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Strict walk helpers: every expected key must exist, nothing else may.
void require_keys(const json& obj, const std::string& path,
                  const std::set<std::string>& keys) {
    if (!obj.is_object()) throw ConfigError("config: " + path + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!keys.count(it.key()))
            throw ConfigError("config: unknown key " + path + "." + it.key());
    for (const auto& k : keys)
        if (!obj.contains(k))
            throw ConfigError("config: missing key " + path + "." + k);
}

double get_num(const json& obj, const std::string& path, const std::string& key) {
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError("config: " + path + "." + key + " must be a number");
    return v.get<double>();
}

long get_int(const json& obj, const std::string& path, const std::string& key) {
    const auto& v = obj.at(key);
    if (!v.is_number_integer())
        throw ConfigError("config: " + path + "." + key + " must be an integer");
    return v.get<long>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key) {
    const auto& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError("config: " + path + "." + key + " must be a boolean");
    return v.get<bool>();
}

std::string get_str(const json& obj, const std::string& path, const std::string& key) {
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ConfigError("config: " + path + "." + key + " must be a string");
    return v.get<std::string>();
}

}  // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    require_keys(root, "<root>", {"model", "dp", "mc", "outputs"});

    RunConfig cfg;
    const json& m = root["model"];
    require_keys(m, "model",
                 {"kappa_f", "kappa_s", "a", "b", "c", "mu", "eta", "T", "dt",
                  "u_max", "initial_bloch"});
    cfg.model.kappa_f = get_num(m, "model", "kappa_f");
    cfg.model.kappa_s = get_num(m, "model", "kappa_s");
    cfg.model.a = get_num(m, "model", "a");
    cfg.model.b = get_num(m, "model", "b");
    cfg.model.c = get_num(m, "model", "c");
    cfg.model.mu = get_num(m, "model", "mu");
    cfg.model.eta = get_num(m, "model", "eta");
    cfg.model.T = get_num(m, "model", "T");
    cfg.model.dt = get_num(m, "model", "dt");
    cfg.model.u_max = get_num(m, "model", "u_max");
    const auto& ib = m.at("initial_bloch");
    if (!ib.is_array() || ib.size() != 3)
        throw ConfigError("config: model.initial_bloch must be an array of 3 numbers");
    for (int i = 0; i < 3; ++i) {
        if (!ib[i].is_number())
            throw ConfigError("config: model.initial_bloch must be an array of 3 numbers");
        cfg.initial_bloch[i] = ib[i].get<double>();
    }
    if (cfg.initial_bloch.norm() > 1.0 + 1e-9)
        throw ConfigError("config: model.initial_bloch must lie in the unit ball");

    // T/dt must be an integer; round dt with a warning when it is not.
    {
        const double ratio = cfg.model.T / cfg.model.dt;
        const long n = std::max<long>(1, std::llround(ratio));
        if (std::abs(ratio - n) > 1e-9) {
            const double adjusted = cfg.model.T / n;
            std::cerr << "warning: T/dt is not an integer; rounding dt from "
                      << format_double(cfg.model.dt) << " to "
                      << format_double(adjusted) << "\n";
            cfg.model.dt = adjusted;
        }
    }
    cfg.model.validate();

    const json& d = root["dp"];
    require_keys(d, "dp",
                 {"nx", "ny", "nz", "dt", "control_n", "search_stride", "refine",
                  "terminal", "value_stride", "policy_stride"});
    cfg.dp.nx = static_cast<int>(get_int(d, "dp", "nx"));
    cfg.dp.ny = static_cast<int>(get_int(d, "dp", "ny"));
    cfg.dp.nz = static_cast<int>(get_int(d, "dp", "nz"));
    cfg.dp.dt = get_num(d, "dp", "dt");
    cfg.dp.control_n = static_cast<int>(get_int(d, "dp", "control_n"));
    cfg.dp.search_stride = static_cast<int>(get_int(d, "dp", "search_stride"));
    cfg.dp.refine = get_bool(d, "dp", "refine");
    const std::string term = get_str(d, "dp", "terminal");
    if (term == "linear-c")
        cfg.dp.terminal = TerminalKind::linear_c;
    else if (term == "exp-c")
        cfg.dp.terminal = TerminalKind::exp_c;
    else
        throw ConfigError("config: dp.terminal must be 'linear-c' or 'exp-c'");
    cfg.dp.value_stride = static_cast<int>(get_int(d, "dp", "value_stride"));
    cfg.dp.policy_stride = static_cast<int>(get_int(d, "dp", "policy_stride"));
    cfg.dp.validate();

    const json& mc = root["mc"];
    require_keys(mc, "mc", {"n_paths", "master_seed"});
    cfg.n_paths = get_int(mc, "mc", "n_paths");
    if (cfg.n_paths < 1) throw ConfigError("config: mc.n_paths must be >= 1");
    const auto& seed = mc.at("master_seed");
    if (!seed.is_number_integer())
        throw ConfigError("config: mc.master_seed must be an integer");
    cfg.master_seed = seed.get<std::uint64_t>();

    const json& o = root["outputs"];
    require_keys(o, "outputs", {"dir"});
    cfg.out_dir = get_str(o, "outputs", "dir");

    cfg.config_hash = fnv1a64(canonical_config_string(cfg));
    return cfg;
}

std::string canonical_config_string(const RunConfig& c) {
    std::string s = canonical_model_string(c.model);
    s += "initial_bloch=" + format_double(c.initial_bloch[0]) + "," +
         format_double(c.initial_bloch[1]) + "," + format_double(c.initial_bloch[2]) +
         "\n";
    s += "dp=" + std::to_string(c.dp.nx) + "," + std::to_string(c.dp.ny) + "," +
         std::to_string(c.dp.nz) + "," + format_double(c.dp.dt) + "," +
         std::to_string(c.dp.control_n) + "," + std::to_string(c.dp.search_stride) +
         "," + (c.dp.refine ? "1" : "0") + "," +
         (c.dp.terminal == TerminalKind::linear_c ? "linear-c" : "exp-c") + "," +
         std::to_string(c.dp.value_stride) + "," + std::to_string(c.dp.policy_stride) +
         "\n";
    s += "mc=" + std::to_string(c.n_paths) + "," + std::to_string(c.master_seed) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// Containers.

namespace {

constexpr const char* kMagic = "qfc-grid v1";

ordered_json params_to_json(const TwoLevelParams& p) {
    ordered_json j;
    j["kappa_f"] = p.kappa_f;
    j["kappa_s"] = p.kappa_s;
    j["a"] = p.a;
    j["b"] = p.b;
    j["c"] = p.c;
    j["mu"] = p.mu;
    j["eta"] = p.eta;
    j["T"] = p.T;
    j["dt"] = p.dt;
    j["u_max"] = p.u_max;
    return j;
}

TwoLevelParams params_from_json(const json& j) {
    TwoLevelParams p;
    p.kappa_f = j.at("kappa_f").get<double>();
    p.kappa_s = j.at("kappa_s").get<double>();
    p.a = j.at("a").get<double>();
    p.b = j.at("b").get<double>();
    p.c = j.at("c").get<double>();
    p.mu = j.at("mu").get<double>();
    p.eta = j.at("eta").get<double>();
    p.T = j.at("T").get<double>();
    p.dt = j.at("dt").get<double>();
    p.u_max = j.at("u_max").get<double>();
    return p;
}

ordered_json grid_to_json(const DpGridConfig& g) {
    ordered_json j;
    j["nx"] = g.nx;
    j["ny"] = g.ny;
    j["nz"] = g.nz;
    j["dt"] = g.dt;
    j["control_n"] = g.control_n;
    j["search_stride"] = g.search_stride;
    j["refine"] = g.refine;
    j["terminal"] = g.terminal == TerminalKind::linear_c ? "linear-c" : "exp-c";
    j["value_stride"] = g.value_stride;
    j["policy_stride"] = g.policy_stride;
    return j;
}

DpGridConfig grid_from_json(const json& j) {
    DpGridConfig g;
    g.nx = j.at("nx").get<int>();
    g.ny = j.at("ny").get<int>();
    g.nz = j.at("nz").get<int>();
    g.dt = j.at("dt").get<double>();
    g.control_n = j.at("control_n").get<int>();
    g.search_stride = j.at("search_stride").get<int>();
    g.refine = j.at("refine").get<bool>();
    g.terminal = j.at("terminal").get<std::string>() == "exp-c" ? TerminalKind::exp_c
                                                                : TerminalKind::linear_c;
    g.value_stride = j.at("value_stride").get<int>();
    g.policy_stride = j.at("policy_stride").get<int>();
    return g;
}

struct ArrayRef {
    std::string name;
    const std::vector<double>* data;
};

void write_container(const std::string& path, ordered_json meta,
                     const std::vector<ArrayRef>& arrays) {
    ordered_json dir = ordered_json::array();
    std::string payload;
    for (const auto& a : arrays) {
        ordered_json e;
        e["name"] = a.name;
        e["count"] = a.data->size();
        dir.push_back(e);
        const std::size_t off = payload.size();
        payload.resize(off + a.data->size() * sizeof(double));
        std::memcpy(payload.data() + off, a.data->data(),
                    a.data->size() * sizeof(double));
    }
    meta["arrays"] = dir;
    meta["content_hash"] = "";
    const std::string meta_unhashed = meta.dump();
    const std::uint64_t h = fnv1a64(payload.data(), payload.size(),
                                    fnv1a64(meta_unhashed));
    meta["content_hash"] = hex64(h);
    std::string out = std::string(kMagic) + "\n" + meta.dump() + "\n---\n" + payload;
    atomic_write(path, out);
}

struct Container {
    json meta;
    std::vector<std::pair<std::string, std::vector<double>>> arrays;
    std::uint64_t content_hash = 0;
};

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("container: cannot open " + path);
    std::string magic, meta_line, sep;
    std::getline(in, magic);
    if (magic != kMagic)
        throw ArtifactError("container: bad magic in " + path +
                            " (got '" + magic + "')");
    std::getline(in, meta_line);
    std::getline(in, sep);
    if (sep != "---") throw ArtifactError("container: malformed header in " + path);
    Container c;
    try {
        c.meta = json::parse(meta_line);
    } catch (const json::exception& e) {
        throw ArtifactError(std::string("container: bad metadata: ") + e.what());
    }
    if (c.meta.value("version", 0) != 1)
        throw ArtifactError("container: unsupported schema version");
    std::string payload((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    // Verify content hash over (metadata with empty hash field) + payload.
    json meta_unhashed = c.meta;
    const std::string stored = meta_unhashed.value("content_hash", "");
    meta_unhashed["content_hash"] = "";
    // Re-serialize in the original key order: metadata was written from an
    // ordered map, so round-tripping through ordered_json preserves it.
    ordered_json om = ordered_json::parse(meta_line);
    om["content_hash"] = "";
    const std::uint64_t h =
        fnv1a64(payload.data(), payload.size(), fnv1a64(om.dump()));
    if (hex64(h) != stored)
        throw ArtifactError("container: content hash mismatch in " + path);
    c.content_hash = h;

    std::size_t off = 0;
    for (const auto& e : c.meta.at("arrays")) {
        const std::string name = e.at("name").get<std::string>();
        const std::size_t count = e.at("count").get<std::size_t>();
        if (off + count * sizeof(double) > payload.size())
            throw ArtifactError("container: truncated payload in " + path);
        std::vector<double> v(count);
        std::memcpy(v.data(), payload.data() + off, count * sizeof(double));
        off += count * sizeof(double);
        c.arrays.emplace_back(name, std::move(v));
    }
    return c;
}

const std::vector<double>& find_array(const Container& c, const std::string& name) {
    for (const auto& [n, v] : c.arrays)
        if (n == name) return v;
    throw ArtifactError("container: missing array " + name);
}

ordered_json common_meta(const char* kind, DpMode mode, const TwoLevelParams& p,
                         const DpGridConfig& g, double dt_dp,
                         std::uint64_t config_hash) {
    ordered_json meta;
    meta["format"] = "qfc-grid";
    meta["version"] = 1;
    meta["kind"] = kind;
    meta["mode"] = mode == DpMode::risk_sensitive ? "rs" : "rn";
    meta["model"] = params_to_json(p);
    meta["grid"] = grid_to_json(g);
    meta["dt_dp"] = dt_dp;
    meta["model_hash"] = hex64(model_hash(p));
    meta["config_hash"] = hex64(config_hash);
    return meta;
}

}  // namespace

void save_value_grid(const std::string& path, const ValueGrid& vg,
                     std::uint64_t config_hash) {
    ordered_json meta = common_meta("value", vg.mode, vg.params, vg.grid, vg.dt_dp,
                                    config_hash);
    write_container(path, std::move(meta),
                    {{"times", &vg.times}, {"values", &vg.values}});
}

ValueGrid load_value_grid(const std::string& path) {
    const Container c = read_container(path);
    if (c.meta.at("kind").get<std::string>() != "value")
        throw ArtifactError("container: expected a value grid in " + path);
    ValueGrid vg;
    vg.mode = c.meta.at("mode").get<std::string>() == "rs" ? DpMode::risk_sensitive
                                                           : DpMode::risk_neutral;
    vg.params = params_from_json(c.meta.at("model"));
    vg.grid = grid_from_json(c.meta.at("grid"));
    vg.dt_dp = c.meta.at("dt_dp").get<double>();
    vg.lat = Lattice::over_unit_cube(vg.grid.nx, vg.grid.ny, vg.grid.nz);
    vg.times = find_array(c, "times");
    vg.values = find_array(c, "values");
    if (vg.values.size() != vg.times.size() * static_cast<std::size_t>(vg.lat.nodes()))
        throw ArtifactError("container: value array size mismatch in " + path);
    return vg;
}

void save_policy(const std::string& path, const Policy& pol,
                 std::uint64_t config_hash) {
    ordered_json meta = common_meta("policy", pol.mode, pol.params, pol.grid,
                                    pol.dt_dp, config_hash);
    meta["provenance"] = pol.provenance;
    write_container(path, std::move(meta),
                    {{"times", &pol.times}, {"u_re", &pol.u_re}, {"u_im", &pol.u_im}});
}

Policy load_policy(const std::string& path) {
    const Container c = read_container(path);
    if (c.meta.at("kind").get<std::string>() != "policy")
        throw ArtifactError("container: expected a policy in " + path);
    Policy pol;
    pol.mode = c.meta.at("mode").get<std::string>() == "rs" ? DpMode::risk_sensitive
                                                            : DpMode::risk_neutral;
    pol.params = params_from_json(c.meta.at("model"));
    pol.grid = grid_from_json(c.meta.at("grid"));
    pol.dt_dp = c.meta.at("dt_dp").get<double>();
    pol.provenance = c.meta.value("provenance", "grid-search");
    pol.lat = Lattice::over_unit_cube(pol.grid.nx, pol.grid.ny, pol.grid.nz);
    pol.times = find_array(c, "times");
    pol.u_re = find_array(c, "u_re");
    pol.u_im = find_array(c, "u_im");
    const std::size_t expect = pol.times.size() * static_cast<std::size_t>(pol.lat.nodes());
    if (pol.u_re.size() != expect || pol.u_im.size() != expect)
        throw ArtifactError("container: policy array size mismatch in " + path);
    return pol;
}

std::uint64_t container_content_hash(const std::string& path) {
    return read_container(path).content_hash;
}

std::uint64_t container_model_hash(const std::string& path) {
    const Container c = read_container(path);
    const std::string h = c.meta.at("model_hash").get<std::string>();
    return std::stoull(h, nullptr, 16);
}

void atomic_write(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("atomic_write: cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("atomic_write: short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// Reports and tables.

std::string render_cost_report(const CostReport& r, std::uint64_t config_hash) {
    ordered_json j;
    j["estimator"] = r.estimator_id;
    j["estimate"] = r.estimate;
    j["standard_error"] = r.standard_error;
    j["n_paths"] = r.n_paths;
    j["seed"] = r.seed;
    j["model_hash"] = hex64(r.model_hash);
    j["config_hash"] = hex64(config_hash);
    j["saturation_count"] = r.saturation_count;
    return j.dump(2) + "\n";
}

namespace {

std::string trajectory_header(const RunConfig& cfg, long n_paths) {
    std::string out;
    out += "# qfc simulate v1\n";
    out += "# config_hash=" + hex64(cfg.config_hash) +
           " seed=" + std::to_string(cfg.master_seed) +
           " n_paths=" + std::to_string(n_paths) + "\n";
    std::string echo = canonical_model_string(cfg.model);
    std::string line = "# model:";
    for (char ch : echo) line += (ch == '\n') ? ' ' : ch;
    out += line + "\n";
    out += "# columns: path,step,t,dy2,truth_x,truth_y,truth_z,ctrl_x,ctrl_y,ctrl_z,"
           "u_re,u_im,cost_additive,cost_log_factor\n";
    return out;
}

void append_record_rows(std::string& out, const TrajectoryRecord& r, long pidx) {
    for (std::size_t k = 0; k < r.y_increments.size(); ++k) {
        out += std::to_string(pidx);
        out += ',';
        out += std::to_string(k);
        const double cols[] = {r.times[k + 1],
                               r.y_increments[k],
                               r.truth_bloch[k + 1][0],
                               r.truth_bloch[k + 1][1],
                               r.truth_bloch[k + 1][2],
                               r.controller_bloch[k + 1][0],
                               r.controller_bloch[k + 1][1],
                               r.controller_bloch[k + 1][2],
                               r.controls[k].real(),
                               r.controls[k].imag(),
                               r.cost_additive[k + 1],
                               r.cost_log_factor[k + 1]};
        for (double v : cols) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
}

}  // namespace

TrajectoryWriter::TrajectoryWriter(const std::string& path, const RunConfig& cfg,
                                   long n_paths)
    : path_(path), tmp_path_(path + ".tmp") {
    namespace fs = std::filesystem;
    const fs::path target(path_);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    out_ = std::make_unique<std::ofstream>(tmp_path_, std::ios::binary | std::ios::trunc);
    if (!*out_) throw Error("TrajectoryWriter: cannot open " + tmp_path_);
    *out_ << trajectory_header(cfg, n_paths);
}

TrajectoryWriter::~TrajectoryWriter() {
    if (!closed_) {
        out_.reset();
        std::error_code ec;
        std::filesystem::remove(tmp_path_, ec);
    }
}

void TrajectoryWriter::append(const TrajectoryRecord& record) {
    std::string rows;
    append_record_rows(rows, record, next_index_++);
    *out_ << rows;
    if (!*out_) throw Error("TrajectoryWriter: short write to " + tmp_path_);
}

void TrajectoryWriter::close() {
    if (closed_) return;
    out_->flush();
    if (!*out_) throw Error("TrajectoryWriter: short write to " + tmp_path_);
    out_.reset();
    std::filesystem::rename(tmp_path_, path_);
    closed_ = true;
}

void write_trajectories(const std::string& path,
                        const std::vector<TrajectoryRecord>& records,
                        const RunConfig& cfg) {
    std::string out = trajectory_header(cfg, static_cast<long>(records.size()));
    for (std::size_t pidx = 0; pidx < records.size(); ++pidx)
        append_record_rows(out, records[pidx], static_cast<long>(pidx));
    atomic_write(path, out);
}

void write_master_table(const std::string& path, const MasterSeries& series,
                        std::uint64_t config_hash) {
    std::string out;
    out += "# qfc master v1\n";
    out += "# config_hash=" + hex64(config_hash) + "\n";
    out += "# columns: t,n,x,y,z\n";
    for (std::size_t k = 0; k < series.times.size(); ++k) {
        const Eigen::Vector4d b = bloch_of_matrix(series.states[k]);
        out += format_double(series.times[k]);
        for (int i = 0; i < 4; ++i) {
            out += ',';
            out += format_double(b[i]);
        }
        out += '\n';
    }
    atomic_write(path, out);
}

void write_compare_table(const std::string& path,
                         const std::vector<CompareRow>& rows,
                         std::uint64_t config_hash, const std::string& note) {
    std::string out;
    out += "# qfc compare v1\n";
    out += "# config_hash=" + hex64(config_hash) + "\n";
    if (!note.empty()) out += "# " + note + "\n";
    out += "# columns: mu,J_a,se_a,J_b,se_b\n";
    for (const auto& r : rows) {
        out += format_double(r.mu);
        const double cols[] = {r.j_a, r.se_a, r.j_b, r.se_b};
        for (double v : cols) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    atomic_write(path, out);
}

}  // namespace qfc
