#pragma once

// Quantization-aware training primitives. Weights map onto 2^N - 1 symmetric
// signed levels (zero included) spaced by s_w = max|w| / (2^(N-1) - 1); each
// level stands for one programmable conductance state of a resistive synapse.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bruno/tape.hpp"

namespace bruno::quant {

using Rng = std::mt19937_64;

/// Independent, reproducible stream for (seed, stream id).
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

enum class Rounding { Stochastic, Nearest };
/// What the straight-through gradient does where w/s_w fell outside the level range.
enum class ClipGradient { Zero, PassThrough };

struct QuantSpec {
    std::optional<int> n_bits;  // nullopt = full precision
    std::uint64_t seed = 0;
    double read_noise_sigma = 0.0;  // in units of one level step
    Rounding rounding = Rounding::Stochastic;
    ClipGradient clip = ClipGradient::Zero;

    bool full_precision() const noexcept { return !n_bits.has_value(); }
    /// 2^(N-1) - 1.
    long max_level() const;
    void validate() const;
};

/// s_w for `w` at `n_bits`; 1 when w is all zeros. Throws UsageError on empty input.
double scale(std::span<const double> w, int n_bits);

/// floor(x) + Bernoulli(frac(x)).
long sround(double x, Rng& rng);

/// Level indices plus the information needed to map them back to weights.
struct QuantizedTensor {
    int n_bits = 0;
    double scale = 1.0;    // s_w
    double max_abs = 0.0;  // range the top level maps to; equals max|w| when derived from data
    std::vector<std::size_t> shape;
    std::vector<long> levels;

    /// level * s_w, evaluated as (level / L) * max_abs so the top level reproduces max|w| exactly.
    std::vector<double> dequantize() const;
};

/// Quantize raw weights. `fixed_scale` overrides the data-derived s_w.
QuantizedTensor quantize_levels(std::span<const double> w, const QuantSpec& spec, Rng& rng,
                                std::optional<double> fixed_scale = std::nullopt,
                                std::vector<bool>* clipped = nullptr);

/// Forward: quantize and rescale. Backward: straight-through (identity), zeroed
/// where the pre-rounding value exceeded the level range unless the spec says
/// otherwise. Full precision returns `w` unchanged.
ad::Value quantize_ste(const ad::Value& w, const QuantSpec& spec, Rng& rng,
                       std::optional<double> fixed_scale = std::nullopt);

/// Read-out weights with zero-mean Gaussian noise per read, truncated at half a
/// level step so adjacent levels never overlap. Throws ConfigError when
/// sigma >= 0.5 level steps.
std::vector<double> apply_read_noise(const QuantizedTensor& q, const QuantSpec& spec, Rng& rng);

std::string to_json(const QuantizedTensor& q);
QuantizedTensor quantized_from_json(const std::string& text);
void save_quantized(const std::filesystem::path& path, const QuantizedTensor& q);
QuantizedTensor load_quantized(const std::filesystem::path& path);

/// "FP" or the bit count.
std::string label(const QuantSpec& spec);
/// Parse "FP"/"fp"/"32" (full precision) or a bit count >= 2.
QuantSpec parse_label(const std::string& text);

}  // namespace bruno::quant
