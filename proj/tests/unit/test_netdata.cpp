#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bruno/dataset.hpp"
#include "bruno/errors.hpp"
#include "bruno/network.hpp"

using namespace bruno;

TEST_CASE("parameter counts of the three topologies") {
    auto fe = net::build_network(net::make_spec(net::Architecture::FfFeLif, 12, 256, 27), 0);
    CHECK(fe.parameter_count() == 12 * 256 + 256 * 27);
    CHECK(fe.w_rec.empty());
    CHECK(fe.spec.paper_topology());

    auto rl = net::build_network(net::make_spec(net::Architecture::Rlif, 12, 256, 27), 0);
    CHECK(rl.parameter_count() == 12 * 256 + 256 * 256 + 256 * 27);

    auto ff = net::build_network(net::make_spec(net::Architecture::FfLif, 12, 256, 27), 0);
    CHECK(ff.parameter_count() == 12 * 256 + 256 * 27);
    CHECK(ff.w_in == fe.w_in);  // same shape, same seed, same stream
}

TEST_CASE("non-paper combinations are allowed but flagged") {
    auto spec = net::make_spec(net::Architecture::Rlif, 12, 16, 4);
    spec.output_kind = net::OutputKind::FeLif;
    CHECK_NOTHROW(spec.validate());
    CHECK_FALSE(spec.paper_topology());
}

TEST_CASE("zero hidden neurons is a dimension error") {
    auto spec = net::make_spec(net::Architecture::FfLif, 12, 0, 4);
    CHECK_THROWS_AS(spec.validate(), UsageError);
    CHECK_THROWS_AS(net::build_network(spec, 0), UsageError);
}

TEST_CASE("architecture names") {
    CHECK(net::parse_architecture("ff-felif") == net::Architecture::FfFeLif);
    CHECK(net::parse_architecture("RLIF") == net::Architecture::Rlif);
    CHECK(net::to_string(net::Architecture::FfLif) == "FF-LIF");
    CHECK_THROWS_AS(net::parse_architecture("CNN"), ConfigError);
}

TEST_CASE("weights are drawn within +-1/sqrt(fan_in)") {
    auto n = net::build_network(net::make_spec(net::Architecture::Rlif, 12, 32, 4), 1);
    for (double w : n.w_in) CHECK(std::fabs(w) <= 1.0 / std::sqrt(12.0));
    for (double w : n.w_rec) CHECK(std::fabs(w) <= 1.0 / std::sqrt(32.0));
}

TEST_CASE("dataset generation is deterministic") {
    data::DatasetSpec spec;
    spec.samples_per_class = 5;
    auto a = data::generate_dataset(spec);
    auto b = data::generate_dataset(spec);
    REQUIRE(a.samples.size() == 20);
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(data::format_events(a.samples[i]) == data::format_events(b.samples[i]));
    }
    CHECK(a.train == b.train);
    CHECK(a.train.size() + a.val.size() + a.test.size() == 20);
    spec.seed = 2;
    auto c = data::generate_dataset(spec);
    CHECK(data::format_events(c.samples[0]) != data::format_events(a.samples[0]));
}

TEST_CASE("single class: every label is zero") {
    data::DatasetSpec spec;
    spec.classes = 1;
    spec.samples_per_class = 6;
    for (const auto& s : data::generate_dataset(spec).samples) CHECK(s.label == 0);
}

TEST_CASE("block patterns are linearly separable on spike counts") {
    data::DatasetSpec spec;
    spec.jitter_ms = 0.0;
    spec.base_rate_hz = 0.0;
    spec.active_rate_hz = 1000.0;
    spec.samples_per_class = 10;
    const auto ds = data::generate_dataset(spec);
    const std::size_t dims = spec.channels * static_cast<std::size_t>(spec.segments);
    auto features = [&](const data::SpikeEventStream& s) {
        std::vector<double> f(dims, 0.0);
        const double seg_us = spec.duration_ms * 1e3 / spec.segments;
        for (const auto& e : s.events) {
            const auto seg = std::min<std::size_t>(static_cast<std::size_t>(e.t_us / seg_us), spec.segments - 1);
            f[seg * spec.channels + e.channel] += 1.0;
        }
        return f;
    };
    // Nearest class centroid (a linear classifier) fit on the training split.
    std::vector<std::vector<double>> centroid(spec.classes, std::vector<double>(dims, 0.0));
    std::vector<int> n(spec.classes, 0);
    for (auto i : ds.train) {
        auto f = features(ds.samples[i]);
        auto& c = centroid[ds.samples[i].label];
        for (std::size_t d = 0; d < dims; ++d) c[d] += f[d];
        ++n[ds.samples[i].label];
    }
    for (int k = 0; k < spec.classes; ++k)
        for (auto& x : centroid[k]) x /= std::max(n[k], 1);
    int correct = 0;
    std::vector<std::size_t> held_out = ds.val;
    held_out.insert(held_out.end(), ds.test.begin(), ds.test.end());
    for (auto i : held_out) {
        auto f = features(ds.samples[i]);
        int best = 0;
        double best_d = 1e300;
        for (int k = 0; k < spec.classes; ++k) {
            double d = 0.0;
            for (std::size_t j = 0; j < dims; ++j) d += (f[j] - centroid[k][j]) * (f[j] - centroid[k][j]);
            if (d < best_d) best_d = d, best = k;
        }
        correct += best == ds.samples[i].label;
    }
    CHECK(correct == static_cast<int>(held_out.size()));
}

TEST_CASE("event file parsing") {
    SUBCASE("well-formed file") {
        std::istringstream in("channels=4 duration_us=1000 label=2\n0,1\n10,3\n10,0\n");
        auto s = data::parse_events(in);
        CHECK(s.events.size() == 3);
        CHECK(s.label == 2);
        CHECK(s.channels == 4);
    }
    SUBCASE("decreasing timestamp names the line") {
        std::istringstream in("channels=4 duration_us=1000 label=0\n5,1\n9,1\n3,2\n");
        try {
            data::parse_events(in);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 4);
        }
    }
    SUBCASE("channel out of range") {
        std::istringstream in("channels=2 duration_us=1000 label=0\n5,2\n");
        CHECK_THROWS_AS(data::parse_events(in), ParseError);
    }
    SUBCASE("missing header field") {
        std::istringstream in("channels=2 label=0\n");
        CHECK_THROWS_AS(data::parse_events(in), ParseError);
    }
}

TEST_CASE("event file and manifest round trips") {
    data::DatasetSpec spec;
    spec.samples_per_class = 3;
    spec.duration_ms = 40.0;
    const auto ds = data::generate_dataset(spec);
    const auto dir = std::filesystem::temp_directory_path() / "bruno_dataset_roundtrip";
    std::filesystem::remove_all(dir);

    const auto file = std::filesystem::temp_directory_path() / "bruno_events_roundtrip.txt";
    data::save_events(file, ds.samples[0]);
    auto back = data::load_events(file);
    CHECK(back == ds.samples[0]);
    std::ifstream raw(file);
    std::stringstream text;
    text << raw.rdbuf();
    CHECK(text.str() == data::format_events(ds.samples[0]));
    std::filesystem::remove(file);

    data::write_dataset(dir, ds);
    auto loaded = data::read_dataset(dir / "manifest.json");
    REQUIRE(loaded.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(loaded.samples[i] == ds.samples[i]);
    CHECK(loaded.train == ds.train);
    CHECK(loaded.test == ds.test);
    std::filesystem::remove_all(dir);
}

TEST_CASE("dataset spec validation") {
    data::DatasetSpec spec;
    spec.classes = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = {};
    spec.active_per_segment = 20;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}
