#pragma once

// Command-line front end: `aci <command> [options]`.
//
//   volatility  rolling GARCH(1,1) + ACI over daily prices
//   election    CQR + ACI over counties reporting one at a time
//   simulate    hidden-Markov-model runs checked against the coverage bounds
//   report      coverage summary of a trajectory file
//
// Exit status: 0 success, 2 usage error, 1 data or numerical failure.

#include "aci/core.hpp"
#include "aci/election.hpp"
#include "aci/error.hpp"
#include "aci/hmm.hpp"
#include "aci/io.hpp"
#include "aci/log.hpp"
#include "aci/metrics.hpp"
#include "aci/volatility.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace aci {

namespace cli_detail {

struct AciOptions {
    double alpha = 0.1;
    double gamma = default_step_size;
    std::optional<double> initial_level;
    std::string update = "simple";
    double decay = default_decay;
    std::string method = "aci";

    void add_to(CLI::App& app) {
        app.add_option("--alpha", alpha, "Target miscoverage rate")->capture_default_str();
        app.add_option("--gamma", gamma, "ACI step size")->capture_default_str();
        app.add_option("--initial-level", initial_level, "Starting level alpha_1 (default: alpha)");
        app.add_option("--update", update, "Update rule")
            ->check(CLI::IsMember({"simple", "weighted"}))
            ->capture_default_str();
        app.add_option("--decay", decay, "Decay of the weighted update")->capture_default_str();
        app.add_option("--method", method, "aci, or fixed for a constant level (same as --gamma 0)")
            ->check(CLI::IsMember({"aci", "fixed"}))
            ->capture_default_str();
    }

    AciConfig config() const {
        AciConfig c;
        c.target_miscoverage = alpha;
        c.step_size = method == "fixed" ? 0.0 : gamma;
        c.initial_level = initial_level.value_or(alpha);
        if (update == "weighted") c.update_rule = WeightedGeometricUpdate{decay};
        validate(c);
        return c;
    }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + path.string() + "'", 0);
    out << text;
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline nlohmann::json summary_or_null(const TrajectoryReport& r, std::size_t window) {
    if (r.empty() || window == 0 || window % 2 != 0 || window > r.size()) return nullptr;
    return to_json(summarize(r, window));
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    return p;
}

inline int finish_run(const std::filesystem::path& dir, const TrajectoryReport& r, std::size_t window,
                      nlohmann::json summary) {
    write_trajectory((dir / "trajectory.csv").string(), r, window);
    summary["summary"] = summary_or_null(r, window);
    summary["complete"] = r.complete;
    if (!r.complete) summary["failure"] = r.failure;
    write_text(dir / "summary.json", dump(summary));
    if (!r.complete) {
        std::cerr << "error: run aborted: " << r.failure << '\n';
        return 1;
    }
    return 0;
}

}  // namespace cli_detail

/// Parses and runs one command. Output files go where the options say; errors go to stderr.
inline int run_command(int argc, const char* const* argv) {
    configure_logging();
    using namespace cli_detail;

    CLI::App app{"Adaptive conformal inference experiments", "aci"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");

    // volatility -------------------------------------------------------------
    auto* vol = app.add_subcommand("volatility", "Rolling GARCH(1,1) volatility intervals with ACI");
    AciOptions vol_aci;
    vol_aci.add_to(*vol);
    std::string vol_prices, vol_out;
    std::size_t vol_synthetic = 6250, vol_window = 1250, vol_refit = 1, vol_local = 500;
    std::uint64_t vol_seed = 0;
    auto* vol_prices_opt = vol->add_option("--prices", vol_prices, "CSV with header date,open")->check(CLI::ExistingFile);
    auto* vol_syn_opt =
        vol->add_option("--synthetic", vol_synthetic, "Simulate this many regime-switching GARCH returns instead")
            ->capture_default_str();
    vol_prices_opt->excludes(vol_syn_opt);
    vol->add_option("--window", vol_window, "Fitting and calibration window")->capture_default_str();
    vol->add_option("--refit-every", vol_refit, "Refit GARCH every k steps")->capture_default_str();
    vol->add_option("--local-window", vol_local, "Window for local coverage")->capture_default_str();
    vol->add_option("--seed", vol_seed, "Seed for synthetic data")->capture_default_str();
    vol->add_option("--out", vol_out, "Output directory")->required();

    // election ---------------------------------------------------------------
    auto* ele = app.add_subcommand("election", "Election-night vote intervals with CQR and ACI");
    AciOptions ele_aci;
    ele_aci.add_to(*ele);
    std::string ele_counties, ele_out, ele_sigma = "0";
    std::size_t ele_synthetic = 3000, ele_dim = 11, ele_warmup = 500, ele_refit = 1, ele_local = 300;
    double ele_cal = 0.25;
    std::uint64_t ele_seed = 0;
    auto* ele_counties_opt =
        ele->add_option("--counties", ele_counties, "CSV with header id,population,x1..xd,y_prev,y")
            ->check(CLI::ExistingFile);
    auto* ele_syn_opt =
        ele->add_option("--synthetic", ele_synthetic, "Generate this many synthetic counties instead")
            ->capture_default_str();
    ele_counties_opt->excludes(ele_syn_opt);
    ele->add_option("--covariates", ele_dim, "Covariates per synthetic county")->capture_default_str();
    ele->add_option("--sigma", ele_sigma, "Ordering bias: weight exp(sigma * population); 'inf' sorts by size")
        ->capture_default_str();
    ele->add_option("--warmup", ele_warmup, "Counties observed before the first prediction")->capture_default_str();
    ele->add_option("--cal-frac", ele_cal, "Share of observed counties used for calibration")->capture_default_str();
    ele->add_option("--refit-every", ele_refit, "Refit the quantile regressions every k counties")
        ->capture_default_str();
    ele->add_option("--local-window", ele_local, "Window for local coverage")->capture_default_str();
    ele->add_option("--seed", ele_seed, "Seed for data, ordering and splits")->capture_default_str();
    ele->add_option("--out", ele_out, "Output directory")->required();

    // simulate ---------------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "Hidden-Markov-model runs against the coverage bounds");
    AciOptions sim_aci;
    sim_aci.add_to(*sim);
    std::size_t sim_states = 2, sim_horizon = 5000, sim_reps = 500, sim_threads = 1;
    double sim_p = 0.95, sim_c = 2.0, sim_eps1 = 0.0, sim_eps2 = 0.0;
    std::vector<double> sim_eps{0.02, 0.05}, sim_scales, sim_shifts;
    std::string sim_family = "normal", sim_out;
    std::uint64_t sim_seed = 0;
    sim->add_option("--states", sim_states, "Number of environment states")->capture_default_str();
    sim->add_option("--p", sim_p, "Probability of staying in the current state")->capture_default_str();
    sim->add_option("--horizon", sim_horizon, "Steps per replication after burn-in")->capture_default_str();
    sim->add_option("--reps", sim_reps, "Replications")->capture_default_str();
    sim->add_option("--eps", sim_eps, "Deviation thresholds for the large-deviation bound")->delimiter(',');
    sim->add_option("--family", sim_family, "Per-state score family")
        ->check(CLI::IsMember({"normal", "uniform"}))
        ->capture_default_str();
    sim->add_option("--scales", sim_scales, "Per-state normal score scales (default 1, 2, ...)")->delimiter(',');
    sim->add_option("--shifts", sim_shifts, "Per-state uniform score offsets (default 0)")->delimiter(',');
    sim->add_option("--bias-c", sim_c, "Constant C of the bias bound")->capture_default_str();
    sim->add_option("--eps1", sim_eps1, "First conditional-drift term of the bias bound")->capture_default_str();
    sim->add_option("--eps2", sim_eps2, "Second conditional-drift term of the bias bound")->capture_default_str();
    sim->add_option("--threads", sim_threads, "Worker threads")->capture_default_str();
    sim->add_option("--seed", sim_seed, "Seed")->capture_default_str();
    sim->add_option("--out", sim_out, "Write the JSON report here instead of stdout");

    // report -----------------------------------------------------------------
    auto* rep = app.add_subcommand("report", "Coverage summary of a trajectory file");
    AciOptions rep_aci;
    rep_aci.add_to(*rep);
    std::string rep_in, rep_out;
    std::size_t rep_window = 0;
    rep->add_option("--in", rep_in, "Trajectory CSV")->required()->check(CLI::ExistingFile);
    rep->add_option("--window", rep_window, "Local coverage window (default: from the file, else 500)");
    rep->add_option("--out", rep_out, "Write the JSON summary here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (vol->parsed()) {
            const AciConfig cfg = vol_aci.config();
            const auto dir = prepare_dir(vol_out);
            PriceSeries prices;
            nlohmann::json info;
            if (!vol_prices.empty()) {
                prices = read_prices(vol_prices);
                info["source"] = vol_prices;
            } else {
                prices.open = synthetic_regime_prices(vol_synthetic, vol_seed);
                prices.dates = business_day_labels(prices.open.size());
                std::ofstream out(dir / "prices.csv", std::ios::binary);
                write_prices(out, prices);
                info["source"] = "synthetic";
                info["seed"] = vol_seed;
            }
            VolatilityRunConfig run;
            run.window = vol_window;
            run.refit_every = vol_refit;
            const auto report = run_volatility_experiment(prices.open, cfg, run, prices.dates);
            info["command"] = "volatility";
            info["config"] = to_json(cfg);
            info["window"] = vol_window;
            info["refit_every"] = vol_refit;
            return finish_run(dir, report, vol_local, info);
        }

        if (ele->parsed()) {
            const AciConfig cfg = ele_aci.config();
            OrderingSpec ordering;
            if (ele_sigma == "inf" || ele_sigma == "Infinity")
                ordering.sigma = inf;
            else
                ordering.sigma = csv::parse_number(ele_sigma, 0, "sigma");
            if (!(ordering.sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
            const auto dir = prepare_dir(ele_out);
            std::vector<CountyRecord> counties;
            nlohmann::json info;
            if (!ele_counties.empty()) {
                counties = read_counties(ele_counties);
                info["source"] = ele_counties;
            } else {
                counties = generate_synthetic_counties(ele_synthetic, ele_dim, ele_seed);
                std::ofstream out(dir / "counties.csv", std::ios::binary);
                write_counties(out, counties);
                info["source"] = "synthetic";
            }
            std::vector<double> pops;
            for (const auto& c : counties) pops.push_back(c.population);
            Rng order_rng = Rng::stream(ele_seed, 1);
            Rng split_rng = Rng::stream(ele_seed, 2);
            const auto order = sample_ordering(pops, ordering, order_rng);
            ElectionRunConfig run;
            run.warmup = ele_warmup;
            run.cal_frac = ele_cal;
            run.refit_every = ele_refit;
            const auto report = run_election_experiment(counties, order, cfg, run, split_rng);
            info["command"] = "election";
            info["config"] = to_json(cfg);
            info["sigma"] = json_number(ordering.sigma);
            info["seed"] = ele_seed;
            info["warmup"] = ele_warmup;
            info["cal_frac"] = ele_cal;
            info["refit_every"] = ele_refit;
            return finish_run(dir, report, ele_local, info);
        }

        if (sim->parsed()) {
            const AciConfig cfg = sim_aci.config();
            HmmSpec spec;
            spec.transition = sim_states == 1 ? Eigen::MatrixXd::Ones(1, 1) : symmetric_chain(sim_states, sim_p);
            FixedQuantileFn qhat;
            if (sim_family == "normal") {
                if (sim_scales.empty())
                    for (std::size_t a = 0; a < sim_states; ++a) sim_scales.push_back(static_cast<double>(a + 1));
                if (sim_scales.size() != sim_states) throw ConfigError("--scales needs one value per state");
                for (double s : sim_scales) spec.scores.push_back(ScoreDistribution::normal(0.0, s));
                qhat = NormalQuantile{0.0, 1.0};
            } else {
                if (sim_shifts.empty()) sim_shifts.assign(sim_states, 0.0);
                if (sim_shifts.size() != sim_states) throw ConfigError("--shifts needs one value per state");
                for (double s : sim_shifts) spec.scores.push_back(ScoreDistribution::uniform(s, 1.0));
                qhat = UniformQuantile{0.0, 1.0};
            }
            TheoryRunConfig run;
            run.horizon = sim_horizon;
            run.reps = sim_reps;
            run.epsilons = sim_eps;
            run.bias_constant = sim_c;
            run.eps1 = sim_eps1;
            run.eps2 = sim_eps2;
            run.seed = sim_seed;
            run.threads = sim_threads;
            const auto report = build_theory_report(spec, qhat, cfg, run);
            nlohmann::json j = to_json(report);
            j["config"] = to_json(cfg);
            j["states"] = sim_states;
            j["p"] = sim_p;
            j["family"] = sim_family;
            j["horizon"] = sim_horizon;
            j["reps"] = sim_reps;
            j["seed"] = sim_seed;
            if (sim_out.empty())
                std::cout << dump(j);
            else
                write_text(sim_out, dump(j));
            return 0;
        }

        if (rep->parsed()) {
            TrajectoryFile file = read_trajectory(rep_in);
            if (!file.has_config) file.report.config_echo = rep_aci.config();
            const std::size_t window = rep_window ? rep_window : file.window.value_or(500);
            nlohmann::json j = to_json(summarize(file.report, window));
            j["config"] = to_json(file.report.config_echo);
            j["complete"] = file.report.complete;
            if (rep_out.empty())
                std::cout << dump(j);
            else
                write_text(rep_out, dump(j));
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace aci
