#pragma once

// Spike-event samples, a synthetic spatio-temporal classification set, and
// the plain-text event file format:
//
//     channels=<I> duration_us=<D> label=<L>
//     <t_us>,<channel>
//     ...
//
// with t strictly non-decreasing, 0 <= t < D and channel < I.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bruno::data {

struct SpikeEvent {
    std::uint64_t t_us = 0;
    std::uint32_t channel = 0;

    bool operator==(const SpikeEvent&) const = default;
};

struct SpikeEventStream {
    std::vector<SpikeEvent> events;
    std::uint64_t duration_us = 0;
    std::uint32_t channels = 0;
    int label = 0;

    /// Throws UsageError when the ordering/range invariants do not hold.
    void validate() const;
    bool operator==(const SpikeEventStream&) const = default;
};

struct DatasetSpec {
    int classes = 4;
    std::uint32_t channels = 12;
    double duration_ms = 200.0;
    int segments = 4;
    int active_per_segment = 3;
    double base_rate_hz = 5.0;
    double active_rate_hz = 150.0;
    double jitter_ms = 1.0;
    int samples_per_class = 100;
    std::uint64_t seed = 1;

    void validate() const;
};

enum class Split { Train, Val, Test };

struct Dataset {
    DatasetSpec spec;
    std::vector<SpikeEventStream> samples;
    /// active[class][segment] = sorted active channels
    std::vector<std::vector<std::vector<std::uint32_t>>> patterns;
    std::vector<std::size_t> train, val, test;

    const std::vector<std::size_t>& split(Split s) const;
};

/// Per-class fixed segment patterns, inhomogeneous Poisson sampling with
/// Gaussian timing jitter, 70/15/15 split by seeded shuffle. Deterministic in
/// the spec's seed.
Dataset generate_dataset(const DatasetSpec& spec);

std::string format_events(const SpikeEventStream& s);
SpikeEventStream parse_events(std::istream& in);
SpikeEventStream load_events(const std::filesystem::path& path);
void save_events(const std::filesystem::path& path, const SpikeEventStream& s);

/// Write one event file per sample plus manifest.json listing file, label and split.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// Load a manifest written by write_dataset (or by hand, same schema).
Dataset read_dataset(const std::filesystem::path& manifest);

std::string to_string(Split s);

}  // namespace bruno::data
