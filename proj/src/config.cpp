#include "bruno/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "bruno/errors.hpp"

namespace bruno::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double x = 0.0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || ptr != end) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string num(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

std::string boolean(bool b) { return b ? "true" : "false"; }

neurons::ResetKind to_reset(const std::string& key, const std::string& v) {
    if (v == "soft") return neurons::ResetKind::Soft;
    if (v == "hard") return neurons::ResetKind::Hard;
    throw ConfigError("'" + key + "' expects soft or hard, got '" + v + "'");
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define REAL(KEY, EXPR)                                                                          \
    Field {                                                                                      \
        KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = to_double(k, v); }, \
            [](const RunConfig& c) { return num(c.EXPR); }                                       \
    }
#define UINT(KEY, EXPR, TYPE)                                                                    \
    Field {                                                                                      \
        KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = static_cast<TYPE>(to_uint(k, v)); }, \
            [](const RunConfig& c) { return std::to_string(c.EXPR); }                            \
    }
#define BOOL(KEY, EXPR)                                                                          \
    Field {                                                                                      \
        KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = to_bool(k, v); }, \
            [](const RunConfig& c) { return boolean(c.EXPR); }                                   \
    }
#define RESET(KEY, EXPR)                                                                         \
    Field {                                                                                      \
        KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = to_reset(k, v); }, \
            [](const RunConfig& c) { return neurons::to_string(c.EXPR); }                        \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"net.architecture",
              [](RunConfig& c, const std::string&, const std::string& v) {
                  set_architecture(c, net::parse_architecture(v));
              },
              [](const RunConfig& c) { return net::to_string(c.architecture); }},
        UINT("net.inputs", net.inputs, std::size_t),
        UINT("net.hidden", net.hidden, std::size_t),
        UINT("net.outputs", net.outputs, std::size_t),
        REAL("net.felif_current_scale", net.felif_current_scale),

        REAL("felif.area", net.output_felif.area),
        REAL("felif.c0", net.output_felif.c0),
        REAL("felif.c_par", net.output_felif.c_par),
        REAL("felif.p_s", net.output_felif.p_s),
        REAL("felif.e_a", net.output_felif.e_a),
        REAL("felif.tau0", net.output_felif.tau0),
        REAL("felif.alpha_merz", net.output_felif.alpha_merz),
        REAL("felif.d_fe", net.output_felif.d_fe),
        REAL("felif.r_leak", net.output_felif.r_leak),
        REAL("felif.v_thr", net.output_felif.v_thr),
        REAL("felif.t_refr", net.output_felif.t_refr),

        REAL("hidden.alpha", net.hidden_lif.alpha),
        REAL("hidden.beta", net.hidden_lif.beta),
        REAL("hidden.v_thr", net.hidden_lif.v_thr),
        RESET("hidden.reset", net.hidden_lif.reset),
        REAL("output.alpha", net.output_lif.alpha),
        REAL("output.beta", net.output_lif.beta),
        REAL("output.v_thr", net.output_lif.v_thr),
        RESET("output.reset", net.output_lif.reset),

        Field{"quant.bits",
              [](RunConfig& c, const std::string&, const std::string& v) {
                  const auto parsed = quant::parse_label(v);
                  c.net.quant.n_bits = parsed.n_bits;
              },
              [](const RunConfig& c) { return quant::label(c.net.quant); }},
        UINT("quant.seed", net.quant.seed, std::uint64_t),
        REAL("quant.read_noise_sigma", net.quant.read_noise_sigma),
        Field{"quant.rounding",
              [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v == "stochastic") c.net.quant.rounding = quant::Rounding::Stochastic;
                  else if (v == "nearest") c.net.quant.rounding = quant::Rounding::Nearest;
                  else throw ConfigError("'" + k + "' expects stochastic or nearest, got '" + v + "'");
              },
              [](const RunConfig& c) {
                  return std::string(c.net.quant.rounding == quant::Rounding::Stochastic ? "stochastic" : "nearest");
              }},
        Field{"quant.clip_gradient",
              [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v == "zero") c.net.quant.clip = quant::ClipGradient::Zero;
                  else if (v == "pass") c.net.quant.clip = quant::ClipGradient::PassThrough;
                  else throw ConfigError("'" + k + "' expects zero or pass, got '" + v + "'");
              },
              [](const RunConfig& c) {
                  return std::string(c.net.quant.clip == quant::ClipGradient::Zero ? "zero" : "pass");
              }},

        REAL("train.dt_fine", train.dt_fine),
        REAL("train.dt_coarse", train.dt_coarse),
        UINT("train.substeps", train.substeps, std::size_t),
        UINT("train.steps", train.steps, std::size_t),
        REAL("train.learning_rate", train.learning_rate),
        REAL("train.adam_beta1", train.adam.beta1),
        REAL("train.adam_beta2", train.adam.beta2),
        REAL("train.adam_eps", train.adam.eps),
        UINT("train.epochs", train.epochs, std::size_t),
        UINT("train.batch_size", train.batch_size, std::size_t),
        UINT("train.seed", train.seed, std::uint64_t),
        Field{"train.mode",
              [](RunConfig& c, const std::string&, const std::string& v) { c.train.mode = train::parse_mode(v); },
              [](const RunConfig& c) { return train::to_string(c.train.mode); }},
        REAL("train.surrogate_slope", train.surrogate_slope),
        BOOL("train.detach_reset", train.detach_reset),
        BOOL("train.felif_rate_gradient", train.felif_rate_gradient),
        BOOL("train.freeze_rounding", train.freeze_rounding),
        BOOL("train.shuffle", train.shuffle),
        UINT("train.workers", train.workers, std::size_t),
        UINT("train.tape_byte_limit", train.tape_byte_limit, std::size_t),

        UINT("data.classes", data.classes, int),
        UINT("data.channels", data.channels, std::uint32_t),
        REAL("data.duration_ms", data.duration_ms),
        UINT("data.segments", data.segments, int),
        UINT("data.active_per_segment", data.active_per_segment, int),
        REAL("data.base_rate_hz", data.base_rate_hz),
        REAL("data.active_rate_hz", data.active_rate_hz),
        REAL("data.jitter_ms", data.jitter_ms),
        UINT("data.samples_per_class", data.samples_per_class, int),
        UINT("data.seed", data.seed, std::uint64_t),
    };
    return table;
}

#undef REAL
#undef UINT
#undef BOOL
#undef RESET

}  // namespace

std::vector<Entry> parse(std::istream& in) {
    std::vector<Entry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
        Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
        if (e.key.empty()) throw ParseError("empty key", lineno);
        if (e.value.empty()) throw ParseError("empty value for '" + e.key + "'", lineno);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Entry> load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    return parse(in);
}

std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

void set_architecture(RunConfig& cfg, net::Architecture arch) {
    cfg.architecture = arch;
    cfg.net.hidden_kind = arch == net::Architecture::Rlif ? net::HiddenKind::Rlif : net::HiddenKind::Lif;
    cfg.net.hidden_lif.recurrent = arch == net::Architecture::Rlif;
    cfg.net.output_kind = arch == net::Architecture::FfFeLif ? net::OutputKind::FeLif : net::OutputKind::Lif;
}

void apply(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(cfg, key, value);
            return;
        }
    }
    throw ConfigError("unknown configuration key '" + key + "'");
}

void apply(RunConfig& cfg, const std::vector<Entry>& entries) {
    for (const auto& e : entries) {
        try {
            apply(cfg, e.key, e.value);
        } catch (const ConfigError& err) {
            throw ParseError(err.what(), e.line);
        }
    }
}

std::string format(const RunConfig& cfg) {
    std::ostringstream out;
    for (const auto& f : fields()) out << f.key << " = " << f.get(cfg) << '\n';
    return out.str();
}

std::string format(const neurons::FeLifParams& p) {
    RunConfig c;
    c.net.output_felif = p;
    std::ostringstream out;
    for (const auto& f : fields()) {
        const std::string key = f.key;
        if (key.rfind("felif.", 0) == 0) out << key.substr(6) << " = " << f.get(c) << '\n';
    }
    return out.str();
}

neurons::FeLifParams parse_felif(std::istream& in) {
    RunConfig c;
    for (const auto& e : parse(in)) {
        try {
            apply(c, "felif." + e.key, e.value);
        } catch (const ConfigError& err) {
            throw ParseError(err.what(), e.line);
        }
    }
    c.net.output_felif.validate();
    return c.net.output_felif;
}

}  // namespace bruno::config
