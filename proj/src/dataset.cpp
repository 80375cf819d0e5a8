#include "bruno/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "bruno/errors.hpp"
#include "bruno/quant.hpp"

namespace bruno::data {

namespace {
constexpr std::uint64_t kPatternStream = 0x7061747465726eULL;
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kSampleStream = 0x1000000ULL;
}  // namespace

void SpikeEventStream::validate() const {
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.t_us < prev) throw UsageError("event " + std::to_string(i) + " goes back in time");
        if (e.t_us >= duration_us) throw UsageError("event " + std::to_string(i) + " lies past the stream duration");
        if (e.channel >= channels) throw UsageError("event " + std::to_string(i) + " has channel out of range");
        prev = e.t_us;
    }
}

void DatasetSpec::validate() const {
    if (classes < 1) throw ConfigError("dataset needs at least one class");
    if (channels < 1) throw ConfigError("dataset needs at least one channel");
    if (!(duration_ms > 0.0)) throw ConfigError("dataset duration must be positive");
    if (segments < 1) throw ConfigError("dataset needs at least one segment");
    if (active_per_segment < 0 || static_cast<std::uint32_t>(active_per_segment) > channels) {
        throw ConfigError("active_per_segment must lie in [0, channels]");
    }
    if (!(base_rate_hz >= 0.0) || !(active_rate_hz >= 0.0)) throw ConfigError("rates must be >= 0");
    if (!(jitter_ms >= 0.0)) throw ConfigError("jitter must be >= 0");
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
}

const std::vector<std::size_t>& Dataset::split(Split s) const {
    switch (s) {
        case Split::Train: return train;
        case Split::Val: return val;
        case Split::Test: return test;
    }
    return train;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;

    auto prng = quant::make_rng(spec.seed, kPatternStream);
    std::vector<std::uint32_t> all(spec.channels);
    std::iota(all.begin(), all.end(), 0u);
    ds.patterns.resize(spec.classes);
    for (auto& cls : ds.patterns) {
        cls.resize(spec.segments);
        for (auto& seg : cls) {
            std::vector<std::uint32_t> pick = all;
            std::shuffle(pick.begin(), pick.end(), prng);
            pick.resize(spec.active_per_segment);
            std::sort(pick.begin(), pick.end());
            seg = std::move(pick);
        }
    }

    const double duration_us = spec.duration_ms * 1000.0;
    const double seg_us = duration_us / spec.segments;
    const auto duration_int = static_cast<std::uint64_t>(std::llround(duration_us));

    for (int c = 0; c < spec.classes; ++c) {
        for (int k = 0; k < spec.samples_per_class; ++k) {
            const std::size_t index = static_cast<std::size_t>(c) * spec.samples_per_class + k;
            auto rng = quant::make_rng(spec.seed, kSampleStream + index);
            std::normal_distribution<double> jitter(0.0, spec.jitter_ms * 1000.0);
            SpikeEventStream s;
            s.channels = spec.channels;
            s.duration_us = duration_int;
            s.label = c;
            for (int seg = 0; seg < spec.segments; ++seg) {
                const auto& active = ds.patterns[c][seg];
                const double t0 = seg * seg_us;
                const double t1 = t0 + seg_us;
                for (std::uint32_t ch = 0; ch < spec.channels; ++ch) {
                    const bool on = std::binary_search(active.begin(), active.end(), ch);
                    const double rate = (on ? spec.active_rate_hz : spec.base_rate_hz) * 1e-6;  // per us
                    if (rate <= 0.0) continue;
                    std::exponential_distribution<double> gap(rate);
                    for (double t = t0 + gap(rng); t < t1; t += gap(rng)) {
                        double tj = spec.jitter_ms > 0.0 ? t + jitter(rng) : t;
                        if (tj < 0.0 || tj >= duration_us) continue;
                        const auto ti = static_cast<std::uint64_t>(std::floor(tj));
                        if (ti >= duration_int) continue;
                        s.events.push_back({ti, ch});
                    }
                }
            }
            std::sort(s.events.begin(), s.events.end(), [](const SpikeEvent& a, const SpikeEvent& b) {
                return a.t_us != b.t_us ? a.t_us < b.t_us : a.channel < b.channel;
            });
            ds.samples.push_back(std::move(s));
        }
    }

    std::vector<std::size_t> order(ds.samples.size());
    std::iota(order.begin(), order.end(), 0);
    auto srng = quant::make_rng(spec.seed, kSplitStream);
    std::shuffle(order.begin(), order.end(), srng);
    const std::size_t n = order.size();
    const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n))));
    ds.train.assign(order.begin(), order.begin() + n_train);
    ds.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    ds.test.assign(order.begin() + n_train + n_val, order.end());
    // Splits are kept in sample order so a written manifest reads back identically.
    for (auto* split : {&ds.train, &ds.val, &ds.test}) std::sort(split->begin(), split->end());
    return ds;
}

std::string format_events(const SpikeEventStream& s) {
    std::ostringstream out;
    out << "channels=" << s.channels << " duration_us=" << s.duration_us << " label=" << s.label << '\n';
    for (const auto& e : s.events) out << e.t_us << ',' << e.channel << '\n';
    return out.str();
}

namespace {
std::uint64_t parse_uint(const std::string& text, std::size_t line, const char* what) {
    if (text.empty() || !std::all_of(text.begin(), text.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
        throw ParseError(std::string("expected unsigned integer for ") + what + ", got '" + text + "'", line);
    }
    try {
        return std::stoull(text);
    } catch (const std::exception&) {
        throw ParseError(std::string("integer out of range for ") + what, line);
    }
}
}  // namespace

SpikeEventStream parse_events(std::istream& in) {
    SpikeEventStream s;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    bool have_ch = false, have_dur = false, have_label = false;
    std::istringstream hs(line);
    std::string tok;
    while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw ParseError("malformed header token '" + tok + "'", 1);
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "channels") {
            s.channels = static_cast<std::uint32_t>(parse_uint(val, 1, "channels"));
            have_ch = true;
        } else if (key == "duration_us") {
            s.duration_us = parse_uint(val, 1, "duration_us");
            have_dur = true;
        } else if (key == "label") {
            s.label = static_cast<int>(parse_uint(val, 1, "label"));
            have_label = true;
        } else {
            throw ParseError("unknown header key '" + key + "'", 1);
        }
    }
    if (!have_ch || !have_dur || !have_label) {
        throw ParseError("header needs channels=, duration_us= and label=", 1);
    }

    std::size_t lineno = 1;
    std::uint64_t prev = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError("expected '<t_us>,<channel>'", lineno);
        const std::uint64_t t = parse_uint(line.substr(0, comma), lineno, "t_us");
        const std::uint64_t ch = parse_uint(line.substr(comma + 1), lineno, "channel");
        if (t < prev) throw ParseError("timestamp decreases", lineno);
        if (t >= s.duration_us) throw ParseError("timestamp past duration_us", lineno);
        if (ch >= s.channels) throw ParseError("channel exceeds channels-1", lineno);
        s.events.push_back({t, static_cast<std::uint32_t>(ch)});
        prev = t;
    }
    return s;
}

SpikeEventStream load_events(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    return parse_events(in);
}

void save_events(const std::filesystem::path& path, const SpikeEventStream& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << format_events(s);
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> split_of(ds.samples.size(), "train");
    for (auto i : ds.val) split_of[i] = "val";
    for (auto i : ds.test) split_of[i] = "test";

    nlohmann::json manifest;
    manifest["format"] = "spike-dataset/v1";
    manifest["spec"] = {
        {"classes", ds.spec.classes},           {"channels", ds.spec.channels},
        {"duration_ms", ds.spec.duration_ms},   {"segments", ds.spec.segments},
        {"active_per_segment", ds.spec.active_per_segment},
        {"base_rate_hz", ds.spec.base_rate_hz}, {"active_rate_hz", ds.spec.active_rate_hz},
        {"jitter_ms", ds.spec.jitter_ms},       {"samples_per_class", ds.spec.samples_per_class},
        {"seed", ds.spec.seed},
    };
    manifest["files"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.txt", i);
        save_events(dir / name, ds.samples[i]);
        manifest["files"].push_back({{"path", name}, {"label", ds.samples[i].label}, {"split", split_of[i]}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ConfigError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("cannot read " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what(), 0);
    }
    Dataset ds;
    int max_label = -1;
    std::uint32_t channels = 0;
    const auto base = manifest_path.parent_path();
    try {
        for (const auto& f : manifest.at("files")) {
            auto s = load_events(base / f.at("path").get<std::string>());
            if (f.contains("label") && f.at("label").get<int>() != s.label) {
                throw ParseError("label mismatch for " + f.at("path").get<std::string>(), 0);
            }
            const std::string split = f.value("split", "train");
            const std::size_t idx = ds.samples.size();
            if (split == "train") ds.train.push_back(idx);
            else if (split == "val") ds.val.push_back(idx);
            else if (split == "test") ds.test.push_back(idx);
            else throw ParseError("unknown split '" + split + "'", 0);
            max_label = std::max(max_label, s.label);
            channels = std::max(channels, s.channels);
            ds.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what(), 0);
    }
    ds.spec.classes = max_label + 1;
    ds.spec.channels = channels;
    if (manifest.contains("spec")) {
        const auto& sp = manifest["spec"];
        ds.spec.classes = sp.value("classes", ds.spec.classes);
        ds.spec.duration_ms = sp.value("duration_ms", ds.spec.duration_ms);
        ds.spec.seed = sp.value("seed", ds.spec.seed);
    }
    return ds;
}

}  // namespace bruno::data
