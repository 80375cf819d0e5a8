#pragma once

// Flat key = value configuration files.
//
//     # comment
//     felif.c0 = 0.558e-12      # SI units throughout
//     hidden.alpha = 0.9
//     train.epochs = 20
//
// Keys are grouped by prefix: felif.*, hidden.*, output.*, net.*, quant.*,
// train.*, data.*. Unknown keys and malformed values are errors that name the
// offending line.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bruno/dataset.hpp"
#include "bruno/network.hpp"
#include "bruno/trainer.hpp"

namespace bruno::config {

/// Everything needed to run one training job.
struct RunConfig {
    net::Architecture architecture = net::Architecture::FfLif;
    net::NetworkSpec net = net::make_spec(net::Architecture::FfLif, 12, 64, 4);
    train::TrainConfig train;
    data::DatasetSpec data;
};

struct Entry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

/// Parse `key = value` lines; '#' starts a comment. Throws ParseError.
std::vector<Entry> parse(std::istream& in);
std::vector<Entry> load(const std::filesystem::path& path);

/// Apply one key. Throws ConfigError for unknown keys or bad values.
void apply(RunConfig& cfg, const std::string& key, const std::string& value);
/// Apply all entries; errors are rethrown as ParseError carrying the entry's line.
void apply(RunConfig& cfg, const std::vector<Entry>& entries);

/// Every recognised key, in the order format() writes them.
std::vector<std::string> keys();

/// Switch topology, keeping sizes, neuron parameters and quantization.
void set_architecture(RunConfig& cfg, net::Architecture arch);

/// Every key with its current value, one per line, loadable by parse().
std::string format(const RunConfig& cfg);

/// Same contract for a FeLIF parameter set alone (keys without prefix).
std::string format(const neurons::FeLifParams& p);
neurons::FeLifParams parse_felif(std::istream& in);

}  // namespace bruno::config
