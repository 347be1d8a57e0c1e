#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "prosodyflow/errors.hpp"
#include "prosodyflow/prep/track.hpp"

namespace pflow {

inline double to_midi(double f_hz) {
    if (!(f_hz > 0.0) || !std::isfinite(f_hz)) throw DomainError("midi conversion needs f > 0, got " + std::to_string(f_hz));
    return 12.0 * std::log2(f_hz / 440.0) + 69.0;
}

// mu2 is the (population) standard deviation and mu4 the excess kurtosis.
struct Moments {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double mu3 = 0.0;
    double mu4 = 0.0;
    std::size_t count = 0;
};

inline Moments moments(const std::vector<double>& x) {
    if (x.empty()) throw DegenerateInputError("moments of an empty sample");
    // Exact test: summation rounding would leave a tiny positive variance.
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
        throw DegenerateInputError("zero variance: skewness and kurtosis are undefined");
    }
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = v - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (!(m2 > 0.0)) throw DegenerateInputError("zero variance: skewness and kurtosis are undefined");
    Moments m;
    m.mu1 = mean;
    m.mu2 = std::sqrt(m2);
    m.mu3 = m3 / (m2 * m.mu2);
    m.mu4 = m4 / (m2 * m2) - 3.0;
    m.count = x.size();
    return m;
}

// Metric value plus the number of frames it was computed over.
struct ScoredMetric {
    double value = 0.0;
    std::size_t frames = 0;
};

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ContractError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
    if (a == 0) throw EmptySequenceError(std::string(what) + " over empty sequences");
}
}  // namespace detail

// Mean absolute difference of two binary masks.
inline double vde(const std::vector<int>& pred, const std::vector<int>& ref) {
    detail::require_same_length(pred.size(), ref.size(), "vde");
    std::size_t diff = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) diff += (pred[t] != 0) != (ref[t] != 0);
    return static_cast<double>(diff) / static_cast<double>(pred.size());
}

// Squared midi error over frames voiced in the reference. Reference-voiced
// frames that the prediction left unvoiced (f0 <= 0) have no pitch to compare
// and are skipped; VDE accounts for them.
inline ScoredMetric vfe_scored(const std::vector<double>& pred_f0, const std::vector<double>& ref_f0,
                               const std::vector<int>& ref_mask) {
    detail::require_same_length(pred_f0.size(), ref_f0.size(), "vfe");
    detail::require_same_length(ref_mask.size(), ref_f0.size(), "vfe");
    ScoredMetric out;
    double sum = 0.0;
    for (std::size_t t = 0; t < ref_f0.size(); ++t) {
        if (!ref_mask[t] || !(pred_f0[t] > 0.0)) continue;
        const double d = to_midi(pred_f0[t]) - to_midi(ref_f0[t]);
        sum += d * d;
        ++out.frames;
    }
    if (out.frames == 0) throw DegenerateInputError("vfe: no frames voiced in both prediction and reference");
    out.value = sum / static_cast<double>(out.frames);
    return out;
}

inline double vfe(const std::vector<double>& pred_f0, const std::vector<double>& ref_f0, const std::vector<int>& ref_mask) {
    return vfe_scored(pred_f0, ref_f0, ref_mask).value;
}

inline double enr(const std::vector<double>& pred_e, const std::vector<double>& ref_e) {
    detail::require_same_length(pred_e.size(), ref_e.size(), "enr");
    double sum = 0.0;
    for (std::size_t t = 0; t < pred_e.size(); ++t) {
        const double d = pred_e[t] - ref_e[t];
        sum += d * d;
    }
    return sum / static_cast<double>(pred_e.size());
}

inline constexpr double kVoicedThreshold = 0.3;

// Sampled F0 value channel (ln f0 / divisor on voiced frames, filler
// elsewhere) back to a track: values <= threshold become unvoiced.
inline SequenceTrack threshold_sampled_track(const std::vector<double>& value, double frame_rate = 80.0,
                                             double threshold = kVoicedThreshold, double f0_divisor = 6.0) {
    SequenceTrack tr;
    tr.frame_rate = frame_rate;
    tr.f0_hz.resize(value.size(), 0.0);
    tr.voiced.resize(value.size(), 0);
    tr.energy.assign(value.size(), 0.0);
    for (std::size_t t = 0; t < value.size(); ++t) {
        if (std::isfinite(value[t]) && value[t] > threshold) {
            tr.voiced[t] = 1;
            tr.f0_hz[t] = std::exp(value[t] * f0_divisor);
        }
    }
    return tr;
}

// Voiced midi notes of every frame in a set of tracks.
inline std::vector<double> voiced_midi(const std::vector<SequenceTrack>& tracks) {
    std::vector<double> out;
    for (const auto& tr : tracks) {
        for (std::size_t t = 0; t < tr.length(); ++t) {
            if (tr.voiced[t]) out.push_back(to_midi(tr.f0_hz[t]));
        }
    }
    return out;
}

}  // namespace pflow
