#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "bruno/errors.hpp"
#include "bruno/experiments.hpp"

using namespace bruno;
using namespace bruno::experiments;

namespace {

GridRun fake_run(net::Architecture a, const std::string& q, std::uint64_t seed, double acc,
                 train::RunStatus status = train::RunStatus::Ok) {
    GridRun r{a, q, seed, {}};
    r.run.test_accuracy = acc;
    r.run.status = status;
    return r;
}

config::RunConfig small_lif() {
    config::RunConfig c;
    c.net.hidden = 16;
    c.data.samples_per_class = 10;
    c.data.duration_ms = 50.0;
    c.train.steps = 50;
    c.train.batch_size = 8;
    return c;
}

}  // namespace

TEST_CASE("grid statistics") {
    GridSpec spec;
    spec.architectures = {net::Architecture::FfLif, net::Architecture::FfFeLif};
    spec.quant_levels = {"FP"};
    spec.seeds = {0, 1, 2};
    std::vector<GridRun> runs = {
        fake_run(net::Architecture::FfLif, "FP", 0, 0.5),   fake_run(net::Architecture::FfLif, "FP", 1, 0.7),
        fake_run(net::Architecture::FfLif, "FP", 2, 0.9),   fake_run(net::Architecture::FfFeLif, "FP", 0, 0.8),
        fake_run(net::Architecture::FfFeLif, "FP", 1, 0.8), fake_run(net::Architecture::FfFeLif, "FP", 2, 0.8),
    };
    auto cells = summarize(spec, runs);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].runs == 3);
    CHECK(cells[0].mean == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(cells[0].stddev == doctest::Approx(0.2).epsilon(1e-12));  // sample std of {0.5, 0.7, 0.9}
    CHECK(cells[1].stddev == doctest::Approx(0.0));

    runs[1].run.status = train::RunStatus::Exploded;
    cells = summarize(spec, runs);
    CHECK(cells[0].runs == 2);
    CHECK(cells[0].missing == 1);

    const std::string table = grid_table_csv(spec, cells);
    CHECK(table.rfind("architecture,FP_mean,FP_std\n", 0) == 0);
    CHECK(table.find("FF-FeLIF,80.00,0.00") != std::string::npos);
}

TEST_CASE("published hyperparameters") {
    auto h = published_hyperparameters(net::Architecture::FfLif, quant::parse_label("3"));
    REQUIRE(h);
    CHECK(h->learning_rate == 3.429e-2);
    auto fe = published_hyperparameters(net::Architecture::FfFeLif, quant::parse_label("FP"));
    REQUIRE(fe);
    CHECK(fe->felif_v_thr == 3.388);
    CHECK_FALSE(published_hyperparameters(net::Architecture::Rlif, quant::parse_label("5")));

    GridSpec g;
    auto c = cell_config(g, net::Architecture::FfFeLif, "4", 1);
    CHECK(c.net.output_felif.v_thr == 2.544);
    CHECK(c.train.detach_reset);
    CHECK_FALSE(c.train.felif_rate_gradient);
    CHECK(c.net.quant.n_bits == 4);
}

TEST_CASE("hyperparameter search") {
    SUBCASE("zero trials is a usage error") {
        HpoSpec s;
        s.trials = 0;
        CHECK_THROWS_AS(s.validate(), UsageError);
        s.trials = 1;
        s.alpha_hid = {0.9, 0.1};
        CHECK_THROWS_AS(s.validate(), ConfigError);
    }
    SUBCASE("a single point is returned unchanged") {
        HpoSpec s;
        s.alpha_hid = s.beta_hid = s.alpha_out = s.beta_out = {0.5, 0.5};
        s.learning_rate = {1e-2, 1e-2};
        s.felif_v_thr = {3.0, 3.0};
        for (std::size_t i = 0; i < 3; ++i) {
            auto h = sample_trial(s, i);
            CHECK(h.alpha_hid == 0.5);
            CHECK(h.learning_rate == 1e-2);
            CHECK(h.felif_v_thr == 3.0);
        }
    }
    SUBCASE("samples stay within their ranges") {
        HpoSpec s;
        for (std::size_t i = 0; i < 200; ++i) {
            auto h = sample_trial(s, i);
            CHECK(h.beta_out >= 0.1);
            CHECK(h.beta_out <= 0.99);
            CHECK(h.learning_rate >= 1e-4);
            CHECK(h.learning_rate <= 1e-1);
        }
    }
    SUBCASE("one trial returns that trial's configuration") {
        auto base = small_lif();
        HpoSpec s;
        s.trials = 1;
        s.epochs = 1;
        auto r = run_hpo(base, s);
        REQUIRE(r.trials.size() == 1);
        CHECK(r.best == 0);
        const auto h = current_hyperparameters(r.best_config);
        CHECK(h.alpha_hid == r.trials[0].params.alpha_hid);
        CHECK(h.learning_rate == r.trials[0].params.learning_rate);
        std::istringstream log(trials_jsonl(r));
        std::string line;
        std::getline(log, line);
        CHECK(nlohmann::json::parse(line).at("trial") == 0);
    }
}

TEST_CASE("benchmark rows") {
    BenchSpec spec;
    spec.sizes = {4};
    spec.steps = {10, 20};
    spec.repeats = 1;
    spec.warmup = 0;
    spec.base.train.substeps = 100;
    spec.base.train.dt_fine = 1e-5;
    auto rows = run_bench(spec);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) CHECK(r.status == "ok");
    // Same seeds, same forward computation in both modes.
    CHECK(rows[0].output_spikes == rows[1].output_spikes);
    CHECK(rows[2].output_spikes == rows[3].output_spikes);
    // The BRUNO tape grows linearly in T.
    const double ratio = static_cast<double>(rows[2].peak_nodes) / static_cast<double>(rows[0].peak_nodes);
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.1));
    CHECK(rows[1].peak_nodes > 25 * rows[0].peak_nodes);

    const std::string csv = bench_csv(rows, false);
    CHECK(csv.rfind("size,steps,substeps,mode,peak_nodes,peak_bytes,status,output_spikes\n", 0) == 0);
    CHECK(bench_csv(rows, true).find("fwd_s,bwd_s") != std::string::npos);
}

TEST_CASE("one substep: identical node counts in both modes") {
    BenchSpec spec;
    spec.sizes = {4};
    spec.steps = {20};
    spec.repeats = 1;
    spec.warmup = 0;
    spec.base.train.substeps = 1;
    spec.base.train.dt_fine = 1e-3;
    auto rows = run_bench(spec);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].peak_nodes == rows[1].peak_nodes);
    CHECK(rows[0].peak_bytes == rows[1].peak_bytes);
}

TEST_CASE("a tape budget overrun becomes a row status") {
    BenchSpec spec;
    spec.sizes = {4};
    spec.steps = {20};
    spec.modes = {train::Mode::Vanilla};
    spec.repeats = 1;
    spec.warmup = 0;
    spec.base.train.tape_byte_limit = 1 << 20;
    auto rows = run_bench(spec);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].status == "oom");
}

TEST_CASE("verification report") {
    const neurons::FeLifParams p;
    SUBCASE("the perturbed capacitance fails the trajectory check") {
        neurons::FeLifParams wrong = p;
        wrong.c0 *= 10.0;
        auto rep = felif_fidelity(wrong, p);
        CHECK_FALSE(rep.passed);
        CHECK(rep.max_abs_dv > rep.dv_limit);
    }
    SUBCASE("JSON has one entry per check") {
        std::vector<Check> checks = {{"a", true, "x", 0.1}, {"b", false, "y", 0.2}};
        auto j = nlohmann::json::parse(to_json(checks));
        CHECK(j.at("checks").size() == 2);
        CHECK(j.at("passed") == false);
    }
    SUBCASE("median") {
        CHECK(median({3.0, 1.0, 2.0}) == 2.0);
        CHECK(median({4.0, 1.0}) == 2.5);
        CHECK_THROWS_AS(median({}), UsageError);
    }
}

TEST_CASE("search beats a deliberately bad configuration") {
    auto base = small_lif();
    base.data.samples_per_class = 20;
    const auto ds = data::generate_dataset(base.data);
    HpoSpec s;
    s.trials = 20;
    s.epochs = 3;
    auto r = run_hpo(base, s, &ds);

    config::RunConfig bad = base;
    bad.train.learning_rate = 0.5;
    bad.train.epochs = 3;
    const auto run = train_cell(bad, &ds);
    CHECK(r.trials[r.best].val_accuracy >= run.final_val_accuracy);
}
