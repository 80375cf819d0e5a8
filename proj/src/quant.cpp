#include "bruno/quant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bruno/errors.hpp"

namespace bruno::quant {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
    return Rng(seq);
}

long QuantSpec::max_level() const {
    if (!n_bits) throw UsageError("full-precision spec has no level range");
    return (1L << (*n_bits - 1)) - 1;
}

void QuantSpec::validate() const {
    if (n_bits && (*n_bits < 2 || *n_bits > 31)) throw ConfigError("n_bits must lie in [2, 31]");
    if (!(read_noise_sigma >= 0.0)) throw ConfigError("read_noise_sigma must be >= 0");
    if (read_noise_sigma >= 0.5) {
        throw ConfigError("read_noise_sigma must be below half a level step so levels do not overlap");
    }
}

double scale(std::span<const double> w, int n_bits) {
    if (w.empty()) throw UsageError("scale of an empty tensor");
    double m = 0.0;
    for (double x : w) m = std::max(m, std::fabs(x));
    if (m == 0.0) return 1.0;
    return m / static_cast<double>((1L << (n_bits - 1)) - 1);
}

long sround(double x, Rng& rng) {
    const double f = std::floor(x);
    const double frac = x - f;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // Always draw so the stream position does not depend on the data.
    const bool up = u(rng) < frac;
    return static_cast<long>(f) + (up ? 1 : 0);
}

std::vector<double> QuantizedTensor::dequantize() const {
    const double top = static_cast<double>((1L << (n_bits - 1)) - 1);
    std::vector<double> out(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) out[i] = (static_cast<double>(levels[i]) / top) * max_abs;
    return out;
}

QuantizedTensor quantize_levels(std::span<const double> w, const QuantSpec& spec, Rng& rng,
                                std::optional<double> fixed_scale, std::vector<bool>* clipped) {
    if (spec.full_precision()) throw UsageError("quantize_levels needs a bit width");
    if (w.empty()) throw UsageError("quantize_levels of an empty tensor");
    QuantizedTensor q;
    q.n_bits = *spec.n_bits;
    const long top = spec.max_level();
    const double topd = static_cast<double>(top);

    if (fixed_scale) {
        if (!(*fixed_scale > 0.0)) throw UsageError("fixed scale must be positive");
        q.scale = *fixed_scale;
        q.max_abs = *fixed_scale * topd;
    } else {
        double m = 0.0;
        for (double x : w) m = std::max(m, std::fabs(x));
        q.scale = m == 0.0 ? 1.0 : m / topd;
        q.max_abs = m == 0.0 ? topd : m;
    }

    q.shape = {w.size()};
    q.levels.resize(w.size());
    if (clipped) clipped->assign(w.size(), false);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double x = (w[i] / q.max_abs) * topd;
        long level = spec.rounding == Rounding::Stochastic ? sround(x, rng) : std::lround(x);
        if (std::fabs(x) > topd && clipped) (*clipped)[i] = true;
        q.levels[i] = std::clamp(level, -top, top);
    }
    return q;
}

ad::Value quantize_ste(const ad::Value& w, const QuantSpec& spec, Rng& rng, std::optional<double> fixed_scale) {
    if (spec.full_precision()) return w;
    std::vector<bool> clipped;
    QuantizedTensor q = quantize_levels(w.data(), spec, rng, fixed_scale, &clipped);
    std::vector<double> value = spec.read_noise_sigma > 0.0 ? apply_read_noise(q, spec, rng) : q.dequantize();
    std::vector<double> grad(value.size(), 1.0);
    if (spec.clip == ClipGradient::Zero) {
        for (std::size_t i = 0; i < grad.size(); ++i) {
            if (clipped[i]) grad[i] = 0.0;
        }
    }
    if (w.is_constant()) return ad::Value::constant(std::move(value));
    return w.tape()->record_diagonal(w, value, grad);
}

std::vector<double> apply_read_noise(const QuantizedTensor& q, const QuantSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.read_noise_sigma == 0.0) return q.dequantize();
    const double top = static_cast<double>((1L << (q.n_bits - 1)) - 1);
    std::normal_distribution<double> noise(0.0, spec.read_noise_sigma);
    std::vector<double> out(q.levels.size());
    for (std::size_t i = 0; i < q.levels.size(); ++i) {
        double n = noise(rng);
        while (std::fabs(n) >= 0.5) n = noise(rng);
        out[i] = ((static_cast<double>(q.levels[i]) + n) / top) * q.max_abs;
    }
    return out;
}

std::string to_json(const QuantizedTensor& q) {
    nlohmann::json j;
    j["format"] = "quantized-weights/v1";
    j["n_bits"] = q.n_bits;
    j["scale"] = q.scale;
    j["max_abs"] = q.max_abs;
    j["shape"] = q.shape;
    j["levels"] = q.levels;
    return j.dump();
}

QuantizedTensor quantized_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("quantized weights: ") + e.what(), 0);
    }
    QuantizedTensor q;
    try {
        q.n_bits = j.at("n_bits").get<int>();
        q.scale = j.at("scale").get<double>();
        q.max_abs = j.contains("max_abs") ? j.at("max_abs").get<double>()
                                          : q.scale * static_cast<double>((1L << (q.n_bits - 1)) - 1);
        q.shape = j.at("shape").get<std::vector<std::size_t>>();
        q.levels = j.at("levels").get<std::vector<long>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("quantized weights: ") + e.what(), 0);
    }
    std::size_t n = 1;
    for (auto d : q.shape) n *= d;
    if (n != q.levels.size()) throw ParseError("quantized weights: shape does not match level count", 0);
    const long top = (1L << (q.n_bits - 1)) - 1;
    for (long l : q.levels) {
        if (l < -top || l > top) throw ParseError("quantized weights: level outside range", 0);
    }
    return q;
}

void save_quantized(const std::filesystem::path& path, const QuantizedTensor& q) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_json(q) << '\n';
}

QuantizedTensor load_quantized(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return quantized_from_json(ss.str());
}

std::string label(const QuantSpec& spec) { return spec.n_bits ? std::to_string(*spec.n_bits) : "FP"; }

QuantSpec parse_label(const std::string& text) {
    QuantSpec spec;
    if (text == "FP" || text == "fp" || text == "32") return spec;
    try {
        std::size_t pos = 0;
        const int bits = std::stoi(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        spec.n_bits = bits;
    } catch (const std::exception&) {
        throw ConfigError("bad quantization label '" + text + "'");
    }
    spec.validate();
    return spec;
}

}  // namespace bruno::quant
