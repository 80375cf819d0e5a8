#pragma once

// Experiment drivers shared by the command-line tool and the test suites:
// verification checks, BRUNO-vs-vanilla benchmarks, training grids and random
// hyperparameter search.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bruno/config.hpp"
#include "bruno/dataset.hpp"
#include "bruno/network.hpp"
#include "bruno/trainer.hpp"

namespace bruno::experiments {

// ---------------------------------------------------------------------------
// Hyperparameters

/// Decay constants, learning rate and FeLIF threshold of one grid cell.
struct Hyperparameters {
    double alpha_hid = 0.9;
    double beta_hid = 0.8;
    double alpha_out = 0.9;  // unused for FeLIF outputs
    double beta_out = 0.8;   // unused for FeLIF outputs
    double learning_rate = 1e-3;
    double felif_v_thr = 3.388;
};

/// Published tuned values for (architecture, quantization); nullopt when the
/// combination has none (e.g. bit widths other than FP/8/4/3).
std::optional<Hyperparameters> published_hyperparameters(net::Architecture arch, const quant::QuantSpec& q);

void apply_hyperparameters(config::RunConfig& cfg, const Hyperparameters& h);
Hyperparameters current_hyperparameters(const config::RunConfig& cfg);

/// Options under which FeLIF output layers train: the reset is detached and
/// the switching-law derivative is dropped from the coarse step. The exact
/// coarse Jacobian of the FeLIF equations is unstable at 1 ms (see README).
void apply_felif_training_options(train::TrainConfig& t);

// ---------------------------------------------------------------------------
// Verification

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
    double runtime_s = 0.0;
};

struct FidelityOptions {
    double current = 308e-12;    // A
    double duration = 50e-3;     // s
    double dt = 1e-6;            // s, model step
    double dt_reference = 1e-8;  // s, reference step
    double dv_fraction = 0.01;   // max |dV| as a fraction of v_thr
    double spike_tolerance = 100e-6;  // s
    double slope_window = 100e-6;     // s, window for dV/dt estimates
};

struct FidelityReport {
    double max_abs_dv = 0.0;                // V, outside spike windows
    double dv_limit = 0.0;                  // V
    std::vector<double> spikes_model;       // s
    std::vector<double> spikes_reference;   // s
    double initial_slope = 0.0;             // V/s, model
    double expected_slope = 0.0;            // V/s, I/C
    double stall_max_slope = 0.0;           // V/s, max |dV/dt| while P switches 10%..90%
    double pre_spike_slope = 0.0;           // V/s, just before the first spike
    double p_before_spike = 0.0;            // fraction of P_s at the step before the first spike
    bool shape_ok = false;
    std::string shape_failure;
    bool passed = false;

    std::string summary() const;
};

/// Euler at `o.dt` with `model` parameters against Euler at `o.dt_reference`
/// with `reference` parameters under a constant current.
FidelityReport felif_fidelity(const neurons::FeLifParams& model, const neurons::FeLifParams& reference,
                              const FidelityOptions& o = {});

struct GradientCheckReport {
    std::size_t parameters = 0;
    double max_rel_error = 0.0;
    double tolerance = 1e-4;
    double max_v = 0.0;  // highest membrane potential reached, V
    bool spike_free = false;
    bool passed = false;
};

/// Vanilla-mode gradient of a subthreshold FeLIF layer (5 inputs x 2 neurons)
/// against central finite differences computed with the untaped integrator.
GradientCheckReport gradient_check(std::uint64_t seed = 7, double eps = 1e-5);

struct SroundRow {
    double x = 0.0;
    double mean = 0.0;
    double sigma_mc = 0.0;
    bool passed = false;
};

/// Mean of `draws` stochastic roundings of each x against 4 sigma_mc.
std::vector<SroundRow> sround_check(const std::vector<double>& xs, std::size_t draws = 100000, std::uint64_t seed = 11);

struct EquivalenceReport {
    std::size_t compared = 0;   // number of doubles compared
    std::size_t mismatches = 0;
    std::string first_mismatch;
    bool passed() const noexcept { return compared > 0 && mismatches == 0; }
};

/// BRUNO vs vanilla with one substep: layer states, loss, spike counts,
/// gradients and Adam-updated weights of a small FF-FeLIF network, bitwise.
EquivalenceReport s1_equivalence(std::uint64_t seed = 3, std::size_t neurons = 8, std::size_t steps = 20);

/// The four verification checks with their runtimes.
std::vector<Check> verify_suite();
std::string to_json(const std::vector<Check>& checks);

// ---------------------------------------------------------------------------
// Benchmarks

struct BenchSpec {
    std::vector<std::size_t> sizes = {64};
    std::vector<std::size_t> steps = {200};
    std::vector<train::Mode> modes = {train::Mode::Bruno, train::Mode::Vanilla};
    std::size_t repeats = 3;
    std::size_t warmup = 1;
    config::RunConfig base;  // FeLIF parameters, substeps, tape budget, seeds
};

struct BenchRow {
    std::size_t size = 0;
    std::size_t steps = 0;
    std::size_t substeps = 0;
    train::Mode mode = train::Mode::Bruno;
    double forward_s = 0.0;   // median
    double backward_s = 0.0;  // median
    std::size_t peak_nodes = 0;
    std::size_t peak_bytes = 0;
    std::string status = "ok";
    double output_spikes = 0.0;
    std::string message;
};

/// One row per (size, steps, mode): an FF-FeLIF network with `size` hidden and
/// `size` FeLIF output neurons on one synthetic sample of `steps` coarse steps.
std::vector<BenchRow> run_bench(const BenchSpec& spec);
std::string bench_csv(const std::vector<BenchRow>& rows, bool include_wall_clock = true);

// ---------------------------------------------------------------------------
// Training grids

/// Train one configuration on `ds` (generated from cfg.data when null).
train::TrainRun train_cell(const config::RunConfig& cfg, const data::Dataset* ds = nullptr);

struct GridSpec {
    std::vector<net::Architecture> architectures = {net::Architecture::FfLif, net::Architecture::Rlif,
                                                    net::Architecture::FfFeLif};
    std::vector<std::string> quant_levels = {"FP", "8", "4", "3"};
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    config::RunConfig base;
    bool published_hyperparameters = true;
    std::size_t workers = 1;
};

struct GridRun {
    net::Architecture architecture = net::Architecture::FfLif;
    std::string quant;
    std::uint64_t seed = 0;
    train::TrainRun run;
};

struct GridCell {
    net::Architecture architecture = net::Architecture::FfLif;
    std::string quant;
    std::size_t runs = 0;     // finished runs contributing to the statistics
    std::size_t missing = 0;  // runs that ended with a non-ok status
    double mean = 0.0;        // test accuracy
    double stddev = 0.0;      // sample standard deviation (n - 1); 0 for n < 2
};

/// The configuration of one grid cell and seed.
config::RunConfig cell_config(const GridSpec& spec, net::Architecture arch, const std::string& quant,
                              std::uint64_t seed);
std::vector<GridRun> run_grid(const GridSpec& spec, const data::Dataset* ds = nullptr);
std::vector<GridCell> summarize(const GridSpec& spec, const std::vector<GridRun>& runs);
std::string grid_runs_csv(const std::vector<GridRun>& runs);
std::string grid_summary_csv(const std::vector<GridCell>& cells);
/// Architectures as rows, quantization levels as columns, "mean" and "std" per level.
std::string grid_table_csv(const GridSpec& spec, const std::vector<GridCell>& cells);

// ---------------------------------------------------------------------------
// Hyperparameter search

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct HpoSpec {
    Range alpha_hid{0.1, 0.99};
    Range beta_hid{0.1, 0.99};
    Range alpha_out{0.1, 0.99};
    Range beta_out{0.1, 0.99};
    Range learning_rate{1e-4, 1e-1};  // sampled log-uniformly
    Range felif_v_thr{2.5, 3.5};
    std::size_t trials = 20;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    /// Throws UsageError for zero trials and ConfigError for bad ranges.
    void validate() const;
};

struct HpoTrial {
    std::size_t index = 0;
    Hyperparameters params;
    double val_accuracy = 0.0;
    std::string status;
};

struct HpoResult {
    std::vector<HpoTrial> trials;
    std::size_t best = 0;
    config::RunConfig best_config;
};

/// Draw the parameters of trial `index`.
Hyperparameters sample_trial(const HpoSpec& spec, std::size_t index);
/// Random search maximizing final validation accuracy; ties go to the earliest trial.
HpoResult run_hpo(const config::RunConfig& base, const HpoSpec& spec, const data::Dataset* ds = nullptr);
std::string trials_jsonl(const HpoResult& r);

/// Median of a non-empty sample.
double median(std::vector<double> v);

}  // namespace bruno::experiments
