#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "prosodyflow/dcore/tensor.hpp"
#include "prosodyflow/prep/track.hpp"

namespace pflow {

enum class Filler { distance_transform, linear_interp, none };

inline std::string filler_name(Filler f) {
    switch (f) {
    case Filler::distance_transform: return "dtx";
    case Filler::linear_interp: return "interp";
    case Filler::none: return "none";
    }
    return "none";
}

struct PreprocConfig {
    int group_size = 2;
    double diff_scale = 2.0;
    double f0_divisor = 6.0;
    double energy_diff_gain = 10.0;
    Filler filler = Filler::distance_transform;

    void validate() const {
        if (group_size < 1) throw ConfigError("group_size must be >= 1");
        if (!(diff_scale > 0.0)) throw ConfigError("diff_scale must be positive");
        if (!(f0_divisor > 0.0)) throw ConfigError("f0_divisor must be positive");
        if (!(energy_diff_gain > 0.0)) throw ConfigError("energy_diff_gain must be positive");
    }
};

// Interior: (x[t+1] - x[t-1]) / kappa. Ends: one-sided difference times 2/kappa.
inline std::vector<double> centered_diff(const std::vector<double>& x, double kappa) {
    const std::size_t n = x.size();
    if (n < 2) throw DimensionError("centered_diff needs at least 2 frames, got " + std::to_string(n));
    if (!(kappa > 0.0)) throw ConfigError("diff scale must be positive");
    std::vector<double> d(n);
    for (std::size_t t = 1; t + 1 < n; ++t) d[t] = (x[t + 1] - x[t - 1]) / kappa;
    d[0] = (x[1] - x[0]) * 2.0 / kappa;
    d[n - 1] = (x[n - 1] - x[n - 2]) * 2.0 / kappa;
    return d;
}

namespace detail {
inline void require_some_voiced(const std::vector<int>& voiced, std::size_t n, std::size_t min_count = 1) {
    if (voiced.size() != n) throw DimensionError("voiced mask length does not match signal");
    std::size_t count = 0;
    for (int v : voiced) count += v ? 1 : 0;
    if (count < min_count) {
        throw DegenerateInputError("need at least " + std::to_string(min_count) + " voiced frame(s), found " +
                                   std::to_string(count));
    }
}
}  // namespace detail

// Distance (in frames) from each frame to the nearest voiced frame; 0 on voiced frames.
inline std::vector<std::size_t> voiced_distance(const std::vector<int>& voiced) {
    const std::size_t n = voiced.size();
    const std::size_t inf = n + 1;
    std::vector<std::size_t> d(n, inf);
    std::size_t last = inf;
    for (std::size_t t = 0; t < n; ++t) {
        if (voiced[t]) last = t;
        if (last != inf) d[t] = t - last;
    }
    last = inf;
    for (std::size_t t = n; t-- > 0;) {
        if (voiced[t]) last = t;
        if (last != inf) d[t] = std::min(d[t], last - t);
    }
    return d;
}

// Unvoiced frames become -ln(distance to nearest voiced frame).
inline std::vector<double> distance_fill(const std::vector<double>& f0_log, const std::vector<int>& voiced) {
    detail::require_some_voiced(voiced, f0_log.size());
    const auto d = voiced_distance(voiced);
    std::vector<double> out = f0_log;
    for (std::size_t t = 0; t < out.size(); ++t) {
        if (!voiced[t]) out[t] = -std::log(static_cast<double>(d[t]));
    }
    return out;
}

inline std::vector<double> linear_interp_fill(const std::vector<double>& f0_log, const std::vector<int>& voiced) {
    detail::require_some_voiced(voiced, f0_log.size());
    const std::size_t n = f0_log.size();
    std::vector<double> out = f0_log;
    std::size_t prev = n;
    for (std::size_t t = 0; t < n; ++t) {
        if (!voiced[t]) continue;
        if (prev == n) {
            for (std::size_t u = 0; u < t; ++u) out[u] = f0_log[t];
        } else {
            const double span = static_cast<double>(t - prev);
            for (std::size_t u = prev + 1; u < t; ++u) {
                const double w = static_cast<double>(u - prev) / span;
                out[u] = (1.0 - w) * f0_log[prev] + w * f0_log[t];
            }
        }
        prev = t;
    }
    for (std::size_t u = prev + 1; u < n; ++u) out[u] = f0_log[prev];
    return out;
}

// Log-F0 with unvoiced frames set to zero.
inline std::vector<double> log_f0(const SequenceTrack& tr) {
    std::vector<double> out(tr.length(), 0.0);
    for (std::size_t t = 0; t < tr.length(); ++t) {
        if (tr.voiced[t]) {
            if (!(tr.f0_hz[t] > 0.0)) throw DataError("non-positive f0 on voiced frame " + std::to_string(t));
            out[t] = std::log(tr.f0_hz[t]);
        }
    }
    return out;
}

// A value channel plus its centered-difference auxiliary channel.
struct ScaledFeature {
    std::vector<double> value;
    std::vector<double> diff;
};

// Voiced frames carry ln(f0)/divisor. The filler is computed in the ln domain
// and left unscaled; the diff channel is taken on the filled, unscaled signal.
inline ScaledFeature scale_f0(const SequenceTrack& tr, const PreprocConfig& cfg = {}) {
    tr.validate();
    cfg.validate();
    std::vector<double> ln = log_f0(tr);
    std::vector<double> filled;
    switch (cfg.filler) {
    case Filler::distance_transform: filled = distance_fill(ln, tr.voiced); break;
    case Filler::linear_interp: filled = linear_interp_fill(ln, tr.voiced); break;
    case Filler::none: filled = ln; break;
    }
    ScaledFeature out;
    out.diff = centered_diff(filled, cfg.diff_scale);
    out.value.resize(filled.size());
    for (std::size_t t = 0; t < filled.size(); ++t) {
        const bool scale = tr.voiced[t] || cfg.filler == Filler::linear_interp;
        out.value[t] = scale ? filled[t] / cfg.f0_divisor : filled[t];
    }
    return out;
}

inline double descale_f0(double value, const PreprocConfig& cfg = {}) { return std::exp(value * cfg.f0_divisor); }

inline ScaledFeature scale_energy(const SequenceTrack& tr, const PreprocConfig& cfg = {}) {
    tr.validate();
    cfg.validate();
    for (std::size_t t = 0; t < tr.length(); ++t) {
        if (tr.energy[t] < 0.0) throw DataError("negative energy at frame " + std::to_string(t));
    }
    ScaledFeature out;
    out.value = tr.energy;
    out.diff = centered_diff(tr.energy, cfg.diff_scale);
    for (double& d : out.diff) d *= cfg.energy_diff_gain;
    return out;
}

inline Mat to_column(const std::vector<double>& v) {
    Mat m(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
    return m;
}

inline std::vector<double> to_vector(const Mat& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace pflow
