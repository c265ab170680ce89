// Command-line front end: run, oracle, kappa, stats, gradcheck.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical audit failure.

#include "rudder/experiment.hpp"
#include "rudder/redistribution.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace {

constexpr int kConfigError = 2;
constexpr int kAuditFailure = 3;

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "results";
    std::optional<std::size_t> jobs;
    std::optional<std::size_t> episode_cap;
};

rudder::Config load(const Flags& f) {
    if (f.config.empty()) throw rudder::ConfigError("--config is required");
    rudder::Config c = rudder::Config::load(f.config);
    if (f.seed) c.set("", "seed", std::to_string(*f.seed));
    if (f.jobs) c.set("", "jobs", std::to_string(*f.jobs));
    if (f.episode_cap) c.set("", "episode_cap", std::to_string(*f.episode_cap));
    return c;
}

std::vector<int> delays_of(const rudder::Config& c) {
    std::vector<int> out;
    for (const auto& d : c.list("", "delays")) {
        try {
            out.push_back(std::stoi(d));
        } catch (const std::exception&) {
            throw rudder::ConfigError("bad delay: " + d);
        }
    }
    if (out.empty()) throw rudder::ConfigError("delays must list at least one delay");
    return out;
}

void print_rows(const std::vector<rudder::StatsRow>& rows) {
    std::cout << std::left << std::setw(16) << "method" << std::setw(7) << "delay" << std::setw(12) << "median"
              << std::setw(12) << "mean" << std::setw(10) << "censored" << "p_vs_rudder\n";
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(16) << r.method << std::setw(7) << r.delay << std::setw(12) << r.median
                  << std::setw(12) << r.mean << std::setw(10) << r.censored << r.p_vs_rudder << '\n';
    }
}

int cmd_run(const Flags& f) {
    const rudder::Config c = load(f);
    const rudder::ExperimentConfig e = rudder::parse_experiment(c);
    print_rows(rudder::run_experiment(e, f.out));
    std::cout << "wrote " << f.out << "/trials.csv, stats.csv, curve.csv\n";
    return 0;
}

int cmd_oracle(const Flags& f) {
    const rudder::Config c = load(f);
    const rudder::TaskSpec t = rudder::parse_task_spec(c);
    const auto delays = delays_of(c);
    std::filesystem::create_directories(f.out);
    for (int d : delays) {
        rudder::with_task_env(t, d, [&](const auto& env) {
            const rudder::ExactQ q = rudder::backward_induction(env);
            const std::string path = f.out + "/oracle_d" + std::to_string(d) + ".csv";
            std::ofstream os(path);
            os << std::setprecision(17) << "s,a,q\n";
            for (rudder::StateId s = 0; s < q.states; ++s) {
                if (!q.is_reachable(s)) continue;
                for (rudder::ActionId a = 0; a < q.actions; ++a) os << s << ',' << a << ',' << q.at(s, a) << '\n';
            }
            std::cout << rudder::to_string(t.task) << " delay " << d << ": optimal return " << q.initial_value
                      << " (" << path << ")\n";
        });
    }
    return 0;
}

int cmd_kappa(const Flags& f) {
    const rudder::Config c = load(f);
    const rudder::TaskSpec t = rudder::parse_task_spec(c);
    const auto delays = delays_of(c);
    const std::size_t episodes = c.count("kappa", "episodes", 10000);
    const std::uint64_t seed = c.count("", "seed", 1);
    std::filesystem::create_directories(f.out);
    bool ok = true;
    for (int d : delays) {
        rudder::with_task_env(t, d, [&](const auto& env) {
            rudder::Rng rng(rudder::trial_seed(seed, rudder::cell_name(t.task, "kappa", d), 0));
            const rudder::KappaTable k = rudder::oracle_kappa(env, episodes, rng);
            const std::string path = f.out + "/kappa_d" + std::to_string(d) + ".csv";
            std::ofstream os(path);
            rudder::write_kappa_csv(os, k);
            std::size_t bad = 0;
            for (const auto& cell : k.cells) bad += cell.within() ? 0 : 1;
            ok = ok && bad == 0;
            std::cout << rudder::to_string(t.task) << " delay " << d << ": " << k.cells.size() << " cells, " << bad
                      << " outside 3 SE (" << path << ")\n";
        });
    }
    return ok ? 0 : kAuditFailure;
}

int cmd_stats(const Flags& f, const std::vector<std::string>& inputs) {
    if (inputs.empty()) throw rudder::ConfigError("stats needs at least one trials CSV");
    std::vector<rudder::TrialResult> all;
    for (const auto& path : inputs) {
        std::ifstream in(path);
        if (!in) throw rudder::ConfigError("cannot open " + path);
        const auto rs = rudder::read_trials_csv(in);
        all.insert(all.end(), rs.begin(), rs.end());
    }
    std::filesystem::create_directories(f.out);
    const auto rows = rudder::aggregate(all, rudder::reference_method(all));
    {
        std::ofstream os(f.out + "/stats.csv");
        rudder::write_stats_header(os);
        for (const auto& r : rows) rudder::write_stats_row(os, r);
    }
    {
        std::ofstream os(f.out + "/curve.csv");
        rudder::emit_plot_data(os, rows);
    }
    print_rows(rows);
    return 0;
}

int cmd_gradcheck(const Flags& f, std::size_t instances, std::size_t steps) {
    rudder::Rng rng(f.seed.value_or(1));
    const double err = rudder::random_gradient_check(instances, steps, rng);
    std::cout << "max relative error " << err << " over " << instances << " instances of " << steps << " steps\n";
    return err < 1e-4 ? 0 : kAuditFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RUDDER lab: delayed-reward tasks, reward redistribution and baselines"};
    app.require_subcommand(1);
    Flags f;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "experiment config (key = value)");
        sub->add_option("--seed", f.seed, "base seed");
        sub->add_option("--out", f.out, "output directory");
        sub->add_option("--jobs", f.jobs, "worker threads");
        sub->add_option("--episode-cap", f.episode_cap, "episodes before a trial is censored");
    };
    auto* run = app.add_subcommand("run", "run an experiment");
    auto* oracle = app.add_subcommand("oracle", "dump exact optimal Q tables");
    auto* kappa = app.add_subcommand("kappa", "kappa table of the model-based redistribution");
    auto* stats = app.add_subcommand("stats", "Wilcoxon and medians from trials CSVs");
    auto* grad = app.add_subcommand("gradcheck", "LSTM BPTT versus central differences");
    for (auto* s : {run, oracle, kappa, stats, grad}) add_common(s);
    std::vector<std::string> inputs;
    stats->add_option("inputs", inputs, "trials.csv files");
    std::size_t instances = 20;
    std::size_t steps = 5;
    grad->add_option("--instances", instances, "random instances");
    grad->add_option("--steps", steps, "sequence length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }
    try {
        if (*run) return cmd_run(f);
        if (*oracle) return cmd_oracle(f);
        if (*kappa) return cmd_kappa(f);
        if (*stats) return cmd_stats(f, inputs);
        if (*grad) return cmd_gradcheck(f, instances, steps);
    } catch (const rudder::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const rudder::UnsupportedError& e) {
        std::cerr << "unsupported: " << e.what() << '\n';
        return kConfigError;
    }
    return 0;
}
