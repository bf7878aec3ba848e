// qfc: risk-sensitive feedback control of a continuously monitored qubit.
// Subcommands: solve, simulate, evaluate, master, compare.

#include <complex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qfc/hashing.hpp"
#include "qfc/io.hpp"
#include "qfc/parallel.hpp"

namespace fs = std::filesystem;
using namespace qfc;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir_override;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    int threads = 0;
};

RunConfig resolved_config(const GlobalOpts& g) {
    RunConfig cfg = load_config(g.config_path);
    if (!g.out_dir_override.empty()) cfg.out_dir = g.out_dir_override;
    if (g.seed_set) cfg.master_seed = g.seed_override;
    cfg.config_hash = fnv1a64(canonical_config_string(cfg));
    std::cout << "config_hash=" << hex64(cfg.config_hash) << "\n";
    return cfg;
}

Complex parse_complex(const std::string& s) {
    std::istringstream in(s);
    double re = 0.0, im = 0.0;
    char comma = 0;
    in >> re;
    if (in >> comma) {
        if (comma != ',') throw ConfigError("expected 're,im' complex literal: " + s);
        in >> im;
    }
    return {re, im};
}

// Piecewise-constant open-loop signal from a CSV file with columns t,u_re,u_im.
std::function<Complex(double)> signal_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("signal file: cannot open " + path);
    auto times = std::make_shared<std::vector<double>>();
    auto values = std::make_shared<std::vector<Complex>>();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        double t, re, im;
        char c1, c2;
        if (!(row >> t >> c1 >> re >> c2 >> im) || c1 != ',' || c2 != ',')
            throw ConfigError("signal file: malformed row '" + line + "'");
        if (!times->empty() && t <= times->back())
            throw ConfigError("signal file: times must be strictly increasing");
        times->push_back(t);
        values->push_back({re, im});
    }
    if (times->empty()) throw ConfigError("signal file: no rows in " + path);
    return [times, values](double t) -> Complex {
        auto it = std::upper_bound(times->begin(), times->end(), t);
        const std::size_t i = it == times->begin() ? 0 : (it - times->begin()) - 1;
        return (*values)[i];
    };
}

ControllerHandle controller_from_policy_file(const RunConfig& cfg,
                                             const std::string& policy_path,
                                             std::shared_ptr<const Policy>* keep) {
    Policy pol = load_policy(policy_path);
    if (model_hash(pol.params) != model_hash(cfg.model))
        throw ArtifactError("policy " + policy_path +
                            " was built for a different model (hash mismatch); "
                            "re-run solve");
    auto shared = std::make_shared<const Policy>(std::move(pol));
    if (keep) *keep = shared;
    const auto kind = shared->mode == DpMode::risk_sensitive
                          ? ControllerHandle::FilterKind::risk_sensitive
                          : ControllerHandle::FilterKind::standard;
    return ControllerHandle::from_policy(shared, kind, cfg.model, cfg.initial_bloch);
}

int cmd_solve(const GlobalOpts& g, const std::string& mode) {
    const RunConfig cfg = resolved_config(g);
    const bool rs = mode == "rs";
    const DpResult res = rs ? rs_backward_solve(cfg.model, cfg.dp)
                            : rn_backward_solve(cfg.model, cfg.dp);
    const fs::path dir(cfg.out_dir);
    const std::string vpath = (dir / ("value_" + mode + ".qfcg")).string();
    const std::string ppath = (dir / ("policy_" + mode + ".qfcg")).string();
    save_value_grid(vpath, res.value, cfg.config_hash);
    save_policy(ppath, res.policy, cfg.config_hash);
    const double v0 = res.value.at(cfg.initial_bloch[0], cfg.initial_bloch[1],
                                   cfg.initial_bloch[2], 0.0);
    std::cout << "value[t=0, initial_state]=" << format_double(v0) << "\n";
    std::cout << "wrote " << vpath << " content_hash="
              << hex64(container_content_hash(vpath)) << "\n";
    std::cout << "wrote " << ppath << " content_hash="
              << hex64(container_content_hash(ppath)) << "\n";
    return 0;
}

int cmd_simulate(const GlobalOpts& g, const std::string& policy_path, long n_paths,
                 bool zero_control) {
    const RunConfig cfg = resolved_config(g);
    const ModelSpec spec = two_level_model(cfg.model);
    std::shared_ptr<const Policy> keep;
    ControllerHandle proto =
        zero_control
            ? ControllerHandle::constant(Complex(0, 0), cfg.model, cfg.initial_bloch)
            : controller_from_policy_file(cfg, policy_path, &keep);
    const StateMatrix pi0(
        CMatrix(matrix_of_bloch(1.0, cfg.initial_bloch[0], cfg.initial_bloch[1],
                                cfg.initial_bloch[2])),
        true);
    const std::string path = (fs::path(cfg.out_dir) / "trajectories.csv").string();
    TrajectoryWriter writer(path, cfg, n_paths);
    for (long i = 0; i < n_paths; ++i) {
        ControllerHandle c = proto;
        c.reset();
        writer.append(run_closed_loop(spec, pi0, std::move(c),
                                      NoiseStream(cfg.master_seed, i)));
    }
    writer.close();
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& estimator,
                 const std::string& policy_path, bool zero_control,
                 const std::string& const_u) {
    const RunConfig cfg = resolved_config(g);
    std::shared_ptr<const Policy> keep;
    ControllerHandle controller =
        zero_control ? ControllerHandle::constant(Complex(0, 0), cfg.model,
                                                  cfg.initial_bloch)
        : !const_u.empty()
            ? ControllerHandle::constant(parse_complex(const_u), cfg.model,
                                         cfg.initial_bloch)
            : controller_from_policy_file(cfg, policy_path, &keep);
    CostReport rep;
    if (estimator == "rs-ref")
        rep = estimate_cost_rs_reference(cfg.model, controller, cfg.initial_bloch,
                                         cfg.n_paths, cfg.master_seed);
    else if (estimator == "rs-phys")
        rep = estimate_cost_rs_physical(cfg.model, controller, cfg.initial_bloch,
                                        cfg.n_paths, cfg.master_seed);
    else if (estimator == "rn-ref")
        rep = estimate_cost_rn(cfg.model, controller, cfg.initial_bloch, cfg.n_paths,
                               cfg.master_seed, Measure::reference);
    else if (estimator == "rn-phys")
        rep = estimate_cost_rn(cfg.model, controller, cfg.initial_bloch, cfg.n_paths,
                               cfg.master_seed, Measure::physical);
    else
        throw ConfigError("evaluate: unknown estimator " + estimator);
    const std::string path =
        (fs::path(cfg.out_dir) / ("report_" + estimator + ".json")).string();
    atomic_write(path, render_cost_report(rep, cfg.config_hash));
    std::cout << "estimate=" << format_double(rep.estimate)
              << " se=" << format_double(rep.standard_error)
              << " wall_s=" << format_double(rep.wall_time_s) << "\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_master(const GlobalOpts& g, const std::string& u_const,
               const std::string& signal_path) {
    const RunConfig cfg = resolved_config(g);
    const ModelSpec spec = two_level_model(cfg.model);
    std::function<Complex(double)> signal;
    if (!signal_path.empty()) {
        signal = signal_from_file(signal_path);
    } else {
        const Complex u = parse_complex(u_const);
        signal = [u](double) { return u; };
    }
    const StateMatrix rho0(
        CMatrix(matrix_of_bloch(1.0, cfg.initial_bloch[0], cfg.initial_bloch[1],
                                cfg.initial_bloch[2])),
        true);
    const MasterSeries series =
        propagate_master(spec, rho0, signal, cfg.model.T, cfg.model.dt);
    const std::string path = (fs::path(cfg.out_dir) / "master.csv").string();
    write_master_table(path, series, cfg.config_hash);
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_compare(const GlobalOpts& g, const std::string& policy_a,
                const std::string& policy_b, const std::string& mu_list) {
    const RunConfig cfg = resolved_config(g);
    std::vector<double> mus;
    {
        std::istringstream in(mu_list);
        std::string tok;
        while (std::getline(in, tok, ',')) mus.push_back(std::stod(tok));
        if (mus.empty()) throw ConfigError("compare: empty mu list");
    }
    std::shared_ptr<const Policy> ka, kb;
    ControllerHandle ca = controller_from_policy_file(cfg, policy_a, &ka);
    ControllerHandle cb = controller_from_policy_file(cfg, policy_b, &kb);
    std::vector<CompareRow> rows;
    for (double mu : mus) {
        TwoLevelParams pm = cfg.model;
        pm.mu = mu;
        CompareRow row;
        row.mu = mu;
        if (mu == 0.0) {
            // Reported as the mu -> 0 transform limit of (J^mu - 1)/mu,
            // i.e. the risk-neutral cost.
            const CostReport a = estimate_cost_rn(pm, ca, cfg.initial_bloch,
                                                  cfg.n_paths, cfg.master_seed,
                                                  Measure::reference);
            const CostReport b = estimate_cost_rn(pm, cb, cfg.initial_bloch,
                                                  cfg.n_paths, cfg.master_seed,
                                                  Measure::reference);
            row.j_a = a.estimate;
            row.se_a = a.standard_error;
            row.j_b = b.estimate;
            row.se_b = b.standard_error;
        } else {
            const CostReport a = estimate_cost_rs_reference(
                pm, ca, cfg.initial_bloch, cfg.n_paths, cfg.master_seed);
            const CostReport b = estimate_cost_rs_reference(
                pm, cb, cfg.initial_bloch, cfg.n_paths, cfg.master_seed);
            row.j_a = a.estimate;
            row.se_a = a.standard_error;
            row.j_b = b.estimate;
            row.se_b = b.standard_error;
        }
        rows.push_back(row);
    }
    const std::string path = (fs::path(cfg.out_dir) / "compare.csv").string();
    write_compare_table(path, rows, cfg.config_hash,
                        "mu=0 rows report the risk-neutral cost (limit of "
                        "(J^mu-1)/mu); common random numbers across policies");
    std::cout << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"risk-sensitive feedback control of a monitored qubit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "path to the JSON run configuration")
        ->required();
    app.add_option("--out", g.out_dir_override, "output directory override");
    auto* seed_opt =
        app.add_option("--seed", g.seed_override, "master seed override");
    app.add_option("--threads", g.threads, "worker threads (0 = auto)");

    std::string mode = "rs";
    auto* solve = app.add_subcommand("solve", "backward dynamic-programming solve");
    solve->add_option("--mode", mode, "rs or rn")
        ->check(CLI::IsMember({"rs", "rn"}));

    std::string policy_path, const_u, estimator = "rs-ref";
    long n_paths_sim = 1;
    bool zero_control = false;
    auto* simulate = app.add_subcommand("simulate", "closed-loop trajectories");
    simulate->add_option("--policy", policy_path, "policy container file");
    simulate->add_option("--paths", n_paths_sim, "number of trajectories");
    simulate->add_flag("--zero-control", zero_control, "force u = 0");

    auto* evaluate = app.add_subcommand("evaluate", "Monte Carlo cost estimate");
    evaluate->add_option("--policy", policy_path, "policy container file");
    evaluate->add_option("--estimator", estimator,
                         "rs-ref | rs-phys | rn-ref | rn-phys")
        ->check(CLI::IsMember({"rs-ref", "rs-phys", "rn-ref", "rn-phys"}));
    evaluate->add_flag("--zero-control", zero_control, "force u = 0");
    evaluate->add_option("--constant-u", const_u, "constant control 're,im'");

    std::string u_const = "0,0", signal_path;
    auto* master = app.add_subcommand("master", "deterministic master-equation table");
    master->add_option("--u-const", u_const, "constant open-loop control 're,im'");
    master->add_option("--signal", signal_path,
                       "piecewise-constant open-loop signal CSV (t,u_re,u_im)");

    std::string policy_a, policy_b, mu_list = "0,0.05,0.1,0.2";
    auto* compare = app.add_subcommand("compare", "cost-vs-mu table for two policies");
    compare->add_option("--policy-a", policy_a, "first policy")->required();
    compare->add_option("--policy-b", policy_b, "second policy")->required();
    compare->add_option("--mu-list", mu_list, "comma-separated mu values");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;
    set_thread_count(g.threads);

    try {
        if (solve->parsed()) return cmd_solve(g, mode);
        if (simulate->parsed()) {
            if (!zero_control && policy_path.empty())
                throw ConfigError("simulate: need --policy or --zero-control");
            return cmd_simulate(g, policy_path, n_paths_sim, zero_control);
        }
        if (evaluate->parsed()) {
            if (!zero_control && const_u.empty() && policy_path.empty())
                throw ConfigError(
                    "evaluate: need --policy, --constant-u or --zero-control");
            return cmd_evaluate(g, estimator, policy_path, zero_control, const_u);
        }
        if (master->parsed()) return cmd_master(g, u_const, signal_path);
        if (compare->parsed()) return cmd_compare(g, policy_a, policy_b, mu_list);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 3;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
