// Command-line harness: verification, BRUNO-vs-vanilla benchmarks, training,
// accuracy grids, random hyperparameter search and dataset generation.
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 numeric instability.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bruno/config.hpp"
#include "bruno/errors.hpp"
#include "bruno/experiments.hpp"

namespace fs = std::filesystem;
using namespace bruno;

namespace {

enum Exit { kOk = 0, kCheckFailure = 1, kUsage = 2, kInstability = 3 };

/// Configuration flags shared by the subcommands that build a RunConfig:
/// --config FILE, --set key=value and one --<key> flag per configuration key.
struct ConfigFlags {
    CLI::App* app = nullptr;
    std::string config_file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> values;
    std::string dataset;
    bool published = false;

    void attach(CLI::App* sub, bool with_dataset = true) {
        app = sub;
        sub->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
        sub->add_option("--set", sets, "Override one configuration key (key=value); repeatable");
        for (const auto& key : config::keys()) {
            sub->add_option("--" + key, values[key], "Configuration key " + key)->group("Configuration keys");
        }
        if (with_dataset) {
            sub->add_option("--dataset", dataset, "Dataset manifest (default: generate from data.* keys)")
                ->check(CLI::ExistingFile);
        }
    }

    /// Defaults, then architecture-dependent presets, then the file, then flags.
    config::RunConfig build() const {
        std::vector<config::Entry> file;
        if (!config_file.empty()) file = config::load(config_file);
        std::vector<std::pair<std::string, std::string>> flags;
        for (const auto& [key, value] : values) {
            if (app->count("--" + key)) flags.emplace_back(key, value);
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
            flags.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        auto apply_all = [&](config::RunConfig& c) {
            config::apply(c, file);
            for (const auto& [k, v] : flags) config::apply(c, k, v);
        };

        config::RunConfig probe;
        apply_all(probe);
        config::RunConfig c;
        config::set_architecture(c, probe.architecture);
        c.net.quant.n_bits = probe.net.quant.n_bits;
        if (published) {
            if (auto h = experiments::published_hyperparameters(probe.architecture, probe.net.quant)) {
                experiments::apply_hyperparameters(c, *h);
            }
        }
        if (probe.architecture == net::Architecture::FfFeLif) experiments::apply_felif_training_options(c.train);
        apply_all(c);
        return c;
    }

    data::Dataset load_dataset(const config::RunConfig& c) const {
        return dataset.empty() ? data::generate_dataset(c.data) : data::read_dataset(dataset);
    }
};

/// Output directory with a manifest describing the invocation.
class RunDir {
public:
    RunDir(const std::string& command, const std::vector<std::string>& argv, const std::string& path)
        : dir_(path), command_(command), argv_(argv) {
        fs::create_directories(dir_);
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        started_ = buf;
    }

    fs::path write(const std::string& name, const std::string& text) {
        const fs::path p = dir_ / name;
        fs::create_directories(p.parent_path());
        std::ofstream out(p);
        if (!out) throw ConfigError("cannot write " + p.string());
        out << text;
        outputs_.push_back(name);
        return p;
    }
    void record(const std::string& name) { outputs_.push_back(name); }
    const fs::path& path() const { return dir_; }

    void finish(int exit_code, const std::optional<config::RunConfig>& cfg, nlohmann::json extra = {}) {
        nlohmann::json m;
        m["command"] = command_;
        m["arguments"] = argv_;
        m["exit_code"] = exit_code;
        m["outputs"] = outputs_;
        m["started_utc"] = started_;
        if (cfg) {
            nlohmann::json c = nlohmann::json::object();
            std::istringstream in(config::format(*cfg));
            for (const auto& e : config::parse(in)) c[e.key] = e.value;
            m["config"] = c;
        }
        if (!extra.is_null()) m["results"] = extra;
        std::ofstream(dir_ / "manifest.json") << m.dump(2) << '\n';
    }

private:
    fs::path dir_;
    std::string command_;
    std::vector<std::string> argv_;
    std::vector<std::string> outputs_;
    std::string started_;
};

std::string default_dir(const std::string& command) { return "runs/" + command; }

int exit_for(train::RunStatus s) {
    switch (s) {
        case train::RunStatus::Ok: return kOk;
        case train::RunStatus::Exploded:
        case train::RunStatus::Unstable: return kInstability;
        case train::RunStatus::OutOfMemory: return kCheckFailure;
    }
    return kCheckFailure;
}

experiments::Range parse_range(const std::vector<double>& v, const char* name) {
    if (v.size() != 2) throw UsageError(std::string("--") + name + " expects two values lo,hi");
    return {v[0], v[1]};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-timescale training of ferroelectric spiking networks"};
    app.require_subcommand(1);
    std::vector<std::string> args(argv, argv + argc);
    std::string out_dir;

    // verify
    auto* verify = app.add_subcommand("verify", "Run the verification checks");
    bool verify_json = false;
    verify->add_flag("--json", verify_json, "Print a machine-readable report");
    verify->add_option("--out", out_dir, "Run directory");

    // bench
    auto* bench = app.add_subcommand("bench", "Time and memory of BRUNO versus vanilla training");
    ConfigFlags bench_cfg;
    bench_cfg.attach(bench, false);
    experiments::BenchSpec bench_spec;
    std::vector<std::string> bench_modes = {"bruno", "vanilla"};
    double tape_budget_mb = 1536.0;
    bool bench_no_wall = false;
    bench->add_option("--sizes", bench_spec.sizes, "Neurons per layer")->delimiter(',');
    bench->add_option("--steps", bench_spec.steps, "Sequence lengths in coarse steps")->delimiter(',');
    bench->add_option("--modes", bench_modes, "bruno and/or vanilla")->delimiter(',');
    bench->add_option("--repeats", bench_spec.repeats, "Timed repeats (median reported)");
    bench->add_option("--warmup", bench_spec.warmup, "Discarded warm-up runs");
    bench->add_option("--tape-budget-mb", tape_budget_mb, "Per-sample tape budget in MiB (0 = unlimited)");
    bench->add_flag("--no-wall-clock", bench_no_wall, "Omit timing columns");
    bench->add_option("--out", out_dir, "Run directory");

    // train
    auto* trn = app.add_subcommand("train", "Train one configuration");
    ConfigFlags train_cfg;
    train_cfg.attach(trn);
    std::string checkpoint;
    bool train_no_wall = false;
    trn->add_flag("--published", train_cfg.published, "Start from the tuned hyperparameters of this cell");
    trn->add_option("--checkpoint", checkpoint, "Checkpoint file name inside the run directory")
        ->default_val("checkpoint.json");
    trn->add_flag("--no-wall-clock", train_no_wall, "Omit timing fields from the epoch log");
    trn->add_option("--out", out_dir, "Run directory");

    // grid
    auto* grid = app.add_subcommand("grid", "Architecture x quantization accuracy grid");
    ConfigFlags grid_cfg;
    grid_cfg.attach(grid);
    experiments::GridSpec grid_spec;
    std::vector<std::string> grid_archs = {"FF-LIF", "RLIF", "FF-FeLIF"};
    std::size_t num_seeds = 0;
    bool no_published = false;
    grid->add_option("--archs", grid_archs, "Architectures")->delimiter(',');
    grid->add_option("--quant", grid_spec.quant_levels, "Quantization levels (FP or bit counts)")->delimiter(',');
    grid->add_option("--seeds", grid_spec.seeds, "Seeds")->delimiter(',');
    grid->add_option("--num-seeds", num_seeds, "Use seeds 0..N-1");
    grid->add_option("--workers", grid_spec.workers, "Parallel cells");
    grid->add_flag("--no-published", no_published, "Keep configured hyperparameters in every cell");
    grid->add_option("--out", out_dir, "Run directory");

    // hpo
    auto* hpo = app.add_subcommand("hpo", "Random hyperparameter search");
    ConfigFlags hpo_cfg;
    hpo_cfg.attach(hpo);
    experiments::HpoSpec hpo_spec;
    std::vector<double> r_ah, r_bh, r_ao, r_bo, r_lr, r_vt;
    hpo->add_option("--trials", hpo_spec.trials, "Number of trials");
    hpo->add_option("--trial-epochs", hpo_spec.epochs, "Epochs per trial");
    hpo->add_option("--search-seed", hpo_spec.seed, "Seed of the search");
    hpo->add_option("--workers", hpo_spec.workers, "Parallel trials");
    hpo->add_option("--alpha-hid", r_ah, "Range lo,hi")->delimiter(',');
    hpo->add_option("--beta-hid", r_bh, "Range lo,hi")->delimiter(',');
    hpo->add_option("--alpha-out", r_ao, "Range lo,hi")->delimiter(',');
    hpo->add_option("--beta-out", r_bo, "Range lo,hi")->delimiter(',');
    hpo->add_option("--lr", r_lr, "Range lo,hi (log-uniform)")->delimiter(',');
    hpo->add_option("--felif-v-thr", r_vt, "Range lo,hi")->delimiter(',');
    hpo->add_option("--out", out_dir, "Run directory");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as event files plus manifest");
    ConfigFlags gen_cfg;
    gen_cfg.attach(gen, false);
    gen->add_option("--out", out_dir, "Run directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    if (out_dir.empty()) out_dir = default_dir(command);

    try {
        if (command == "verify") {
            RunDir run(command, args, out_dir);
            const auto checks = experiments::verify_suite();
            const std::string report = experiments::to_json(checks);
            run.write("verify.json", report + "\n");
            bool all = true;
            if (verify_json) {
                std::cout << report << '\n';
            }
            for (const auto& c : checks) {
                all = all && c.passed;
                if (!verify_json) {
                    std::printf("%s  %-28s %7.2f s  %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.runtime_s,
                                c.detail.c_str());
                }
            }
            const int code = all ? kOk : kCheckFailure;
            run.finish(code, std::nullopt, nlohmann::json::parse(report));
            return code;
        }

        if (command == "bench") {
            bench_spec.base = bench_cfg.build();
            if (!bench->count("--train.tape_byte_limit")) {
                bench_spec.base.train.tape_byte_limit = static_cast<std::size_t>(tape_budget_mb * 1024.0 * 1024.0);
            }
            bench_spec.modes.clear();
            for (const auto& m : bench_modes) bench_spec.modes.push_back(train::parse_mode(m));
            RunDir run(command, args, out_dir);
            const auto rows = experiments::run_bench(bench_spec);
            const std::string csv = experiments::bench_csv(rows, !bench_no_wall);
            run.write("bench.csv", csv);
            std::cout << csv;
            run.finish(kOk, bench_spec.base);
            return kOk;
        }

        if (command == "train") {
            const auto cfg = train_cfg.build();
            const auto ds = train_cfg.load_dataset(cfg);
            RunDir run(command, args, out_dir);
            run.write("config.txt", config::format(cfg));
            net::Network net = net::build_network(cfg.net, cfg.train.seed);
            train::Adam opt(cfg.train.learning_rate, cfg.train.adam);
            auto result = train::train(net, ds, cfg.train, &opt);
            result.architecture = net::to_string(cfg.architecture);
            run.write("train.jsonl", result.to_jsonl(!train_no_wall));
            if (result.status == train::RunStatus::Ok) {
                train::save_checkpoint((run.path() / checkpoint).string(), net, opt, cfg.train);
                run.record(checkpoint);
            }
            std::printf("status=%s epochs=%zu train=%.4f val=%.4f test=%.4f%s%s\n",
                        train::to_string(result.status).c_str(), result.epochs.size(), result.final_train_accuracy,
                        result.final_val_accuracy, result.test_accuracy, result.message.empty() ? "" : " message=",
                        result.message.c_str());
            const int code = exit_for(result.status);
            run.finish(code, cfg,
                       {{"status", train::to_string(result.status)},
                        {"failed_epoch", result.failed_epoch ? nlohmann::json(*result.failed_epoch) : nlohmann::json()},
                        {"test_accuracy", result.test_accuracy}});
            return code;
        }

        if (command == "grid") {
            grid_spec.base = grid_cfg.build();
            grid_spec.published_hyperparameters = !no_published;
            grid_spec.architectures.clear();
            for (const auto& a : grid_archs) grid_spec.architectures.push_back(net::parse_architecture(a));
            if (num_seeds > 0) {
                grid_spec.seeds.clear();
                for (std::size_t s = 0; s < num_seeds; ++s) grid_spec.seeds.push_back(s);
            }
            if (grid_spec.architectures.empty() || grid_spec.quant_levels.empty() || grid_spec.seeds.empty()) {
                throw UsageError("grid needs at least one architecture, quantization level and seed");
            }
            const auto ds = grid_cfg.load_dataset(grid_spec.base);
            RunDir run(command, args, out_dir);
            const auto runs = experiments::run_grid(grid_spec, &ds);
            for (const auto& r : runs) {
                run.write("runs/" + net::to_string(r.architecture) + "_" + r.quant + "_seed" + std::to_string(r.seed) +
                              ".jsonl",
                          r.run.to_jsonl(false));
            }
            const auto cells = experiments::summarize(grid_spec, runs);
            run.write("runs.csv", experiments::grid_runs_csv(runs));
            run.write("summary.csv", experiments::grid_summary_csv(cells));
            const std::string table = experiments::grid_table_csv(grid_spec, cells);
            run.write("table.csv", table);
            std::cout << table;
            for (const auto& c : cells) {
                if (c.missing > 0) {
                    std::cerr << "warning: " << net::to_string(c.architecture) << " " << c.quant << ": " << c.missing
                              << " run(s) did not finish\n";
                }
            }
            run.finish(kOk, grid_spec.base);
            return kOk;
        }

        if (command == "hpo") {
            const auto base = hpo_cfg.build();
            if (!r_ah.empty()) hpo_spec.alpha_hid = parse_range(r_ah, "alpha-hid");
            if (!r_bh.empty()) hpo_spec.beta_hid = parse_range(r_bh, "beta-hid");
            if (!r_ao.empty()) hpo_spec.alpha_out = parse_range(r_ao, "alpha-out");
            if (!r_bo.empty()) hpo_spec.beta_out = parse_range(r_bo, "beta-out");
            if (!r_lr.empty()) hpo_spec.learning_rate = parse_range(r_lr, "lr");
            if (!r_vt.empty()) hpo_spec.felif_v_thr = parse_range(r_vt, "felif-v-thr");
            hpo_spec.validate();
            const auto ds = hpo_cfg.load_dataset(base);
            RunDir run(command, args, out_dir);
            const auto result = experiments::run_hpo(base, hpo_spec, &ds);
            run.write("trials.jsonl", experiments::trials_jsonl(result));
            run.write("best_config.txt", config::format(result.best_config));
            const auto& b = result.trials[result.best];
            std::printf("best trial %zu: val=%.4f alpha_hid=%.4f beta_hid=%.4f alpha_out=%.4f beta_out=%.4f "
                        "lr=%.4e felif_v_thr=%.4f\n",
                        b.index, b.val_accuracy, b.params.alpha_hid, b.params.beta_hid, b.params.alpha_out,
                        b.params.beta_out, b.params.learning_rate, b.params.felif_v_thr);
            run.finish(kOk, result.best_config, {{"best_trial", b.index}, {"best_val_accuracy", b.val_accuracy}});
            return kOk;
        }

        if (command == "gen-data") {
            const auto cfg = gen_cfg.build();
            const auto ds = data::generate_dataset(cfg.data);
            RunDir run(command, args, out_dir);
            data::write_dataset(run.path() / "data", ds);
            run.record("data/manifest.json");
            std::printf("%zu samples (%zu train, %zu val, %zu test) written to %s\n", ds.samples.size(),
                        ds.train.size(), ds.val.size(), ds.test.size(), (run.path() / "data").c_str());
            run.finish(kOk, cfg);
            return kOk;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const bruno::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericInstability& e) {
        std::cerr << "numeric instability: " << e.what() << '\n';
        return kInstability;
    } catch (const GradientExplosion& e) {
        std::cerr << "gradient explosion: " << e.what() << '\n';
        return kInstability;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kCheckFailure;
    }
    return kUsage;
}
