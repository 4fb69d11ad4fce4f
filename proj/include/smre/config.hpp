#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "smre/errors.hpp"
#include "smre/losses.hpp"
#include "smre/model.hpp"
#include "smre/support_set.hpp"

namespace smre {

/// Everything a training run needs. Serializes to a flat key=value file; the
/// keys are the field paths below.
struct TrainConfig {
    double lambda1 = 1.0;  // weight of the ranking loss
    double lambda2 = 1.0;  // weight of the contrastive loss
    double lambda3 = 1.0;  // weight of the support-branch caption loss
    SSTConfig sst;
    SupportConfig support;
    double lr = 1e-4;
    int epochs = 20;
    int batch_size = 16;
    int beam_size = 5;
    double tel_prob = 1.0;  // chance of feeding the gold token while unrolling
    std::uint32_t seed = 1;
    ModelDims dims;
    double grad_clip = 5.0;  // global gradient norm ceiling, 0 disables
    bool determinism = true;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0)
            throw ContractError("train config: loss weights must be >= 0");
        if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
        if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
        if (beam_size < 1) throw ContractError("train config: beam_size must be >= 1");
        if (!(tel_prob >= 0.0 && tel_prob <= 1.0))
            throw ContractError("train config: tel_prob must lie in [0, 1]");
        if (!(lr >= 0.0)) throw ContractError("train config: lr must be >= 0");
        if (!(grad_clip >= 0.0)) throw ContractError("train config: grad_clip must be >= 0");
        if (!support.enabled && (lambda2 > 0.0 || lambda3 > 0.0))
            throw ContractError("train config: lambda2/lambda3 weight losses that need the support branch enabled");
        sst.validate();
        support.validate();
    }
};

namespace detail {

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ContractError("config: bad number for " + key + ": '" + v + "'");
    }
}

inline long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long out = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ContractError("config: bad integer for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ContractError("config: bad boolean for " + key + ": '" + v + "'");
}

inline std::string trimmed(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline std::string format_config(const TrainConfig& c) {
    std::ostringstream out;
    auto real = [&](const char* k, double v) { out << k << "=" << detail::fmt_real(v) << "\n"; };
    auto integer = [&](const char* k, long v) { out << k << "=" << v << "\n"; };
    auto boolean = [&](const char* k, bool v) { out << k << "=" << (v ? "true" : "false") << "\n"; };
    real("lambda1", c.lambda1);
    real("lambda2", c.lambda2);
    real("lambda3", c.lambda3);
    real("sst.alpha", c.sst.alpha);
    real("sst.m", c.sst.m);
    real("sst.y_signal", c.sst.y_signal);
    real("support.theta_scale", c.support.theta_scale);
    boolean("support.include_self", c.support.include_self);
    boolean("support.enabled", c.support.enabled);
    real("lr", c.lr);
    integer("epochs", c.epochs);
    integer("batch_size", c.batch_size);
    integer("beam_size", c.beam_size);
    real("tel_prob", c.tel_prob);
    integer("seed", static_cast<long>(c.seed));
    integer("dims.d_v", static_cast<long>(c.dims.d_v));
    integer("dims.d_h", static_cast<long>(c.dims.d_h));
    integer("dims.d_s", static_cast<long>(c.dims.d_s));
    integer("dims.d_e", static_cast<long>(c.dims.d_e));
    integer("dims.d_dec", static_cast<long>(c.dims.d_dec));
    integer("dims.d_a", static_cast<long>(c.dims.d_a));
    integer("dims.t_clips", static_cast<long>(c.dims.t_clips));
    integer("dims.max_len", static_cast<long>(c.dims.max_len));
    real("grad_clip", c.grad_clip);
    boolean("determinism", c.determinism);
    return out.str();
}

/// Parses key=value lines; '#' starts a comment, unknown keys are errors.
/// Missing keys keep their defaults.
inline TrainConfig parse_config(std::istream& in) {
    TrainConfig c;
    std::string line;
    std::size_t lineno = 0;
    auto usize = [](long v, const std::string& key) {
        if (v < 0) throw ContractError("config: " + key + " must be >= 0");
        return static_cast<std::size_t>(v);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trimmed(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trimmed(line.substr(0, eq));
        const std::string val = detail::trimmed(line.substr(eq + 1));
        if (key == "lambda1") c.lambda1 = detail::parse_real(key, val);
        else if (key == "lambda2") c.lambda2 = detail::parse_real(key, val);
        else if (key == "lambda3") c.lambda3 = detail::parse_real(key, val);
        else if (key == "sst.alpha") c.sst.alpha = detail::parse_real(key, val);
        else if (key == "sst.m") c.sst.m = detail::parse_real(key, val);
        else if (key == "sst.y_signal") c.sst.y_signal = detail::parse_real(key, val);
        else if (key == "support.theta_scale") c.support.theta_scale = detail::parse_real(key, val);
        else if (key == "support.include_self") c.support.include_self = detail::parse_bool(key, val);
        else if (key == "support.enabled") c.support.enabled = detail::parse_bool(key, val);
        else if (key == "lr") c.lr = detail::parse_real(key, val);
        else if (key == "epochs") c.epochs = static_cast<int>(detail::parse_int(key, val));
        else if (key == "batch_size") c.batch_size = static_cast<int>(detail::parse_int(key, val));
        else if (key == "beam_size") c.beam_size = static_cast<int>(detail::parse_int(key, val));
        else if (key == "tel_prob") c.tel_prob = detail::parse_real(key, val);
        else if (key == "seed") c.seed = static_cast<std::uint32_t>(usize(detail::parse_int(key, val), key));
        else if (key == "dims.d_v") c.dims.d_v = usize(detail::parse_int(key, val), key);
        else if (key == "dims.d_h") c.dims.d_h = usize(detail::parse_int(key, val), key);
        else if (key == "dims.d_s") c.dims.d_s = usize(detail::parse_int(key, val), key);
        else if (key == "dims.d_e") c.dims.d_e = usize(detail::parse_int(key, val), key);
        else if (key == "dims.d_dec") c.dims.d_dec = usize(detail::parse_int(key, val), key);
        else if (key == "dims.d_a") c.dims.d_a = usize(detail::parse_int(key, val), key);
        else if (key == "dims.t_clips") c.dims.t_clips = usize(detail::parse_int(key, val), key);
        else if (key == "dims.max_len") c.dims.max_len = usize(detail::parse_int(key, val), key);
        else if (key == "grad_clip") c.grad_clip = detail::parse_real(key, val);
        else if (key == "determinism") c.determinism = detail::parse_bool(key, val);
        else throw ContractError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return c;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    return parse_config(in);
}

inline void save_config(const TrainConfig& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config file " + path);
    out << format_config(c);
    if (!out) throw IoError("short write to config file " + path);
}

/// SMRE_DETERMINISM=1 forces the determinism flag on.
inline bool determinism_forced_by_env() {
    const char* v = std::getenv("SMRE_DETERMINISM");
    return v != nullptr && std::string(v) == "1";
}

}  // namespace smre
