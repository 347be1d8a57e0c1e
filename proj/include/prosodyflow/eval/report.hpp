#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosodyflow/eval/metrics.hpp"
#include "prosodyflow/prep/track.hpp"

namespace pflow {

// Sampled tracks are stored as <id>.sNNN.track.csv; reference tracks as
// <id>.track.csv.
inline std::string sample_file_name(const std::string& id, int sample) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), ".s%03d", sample);
    return id + buf + ".track.csv";
}

struct NamedTrack {
    std::string id;
    int sample = 0;
    SequenceTrack track;
};

// Splits "<id>.sNNN" into id and sample index; names without the suffix are
// sample 0.
inline std::pair<std::string, int> split_sample_name(const std::string& stem) {
    const auto dot = stem.rfind(".s");
    if (dot != std::string::npos && dot + 2 < stem.size() &&
        std::all_of(stem.begin() + static_cast<long>(dot) + 2, stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        return {stem.substr(0, dot), std::stoi(stem.substr(dot + 2))};
    }
    return {stem, 0};
}

// Every *.track.csv in dir, sorted by (id, sample).
inline std::vector<NamedTrack> read_track_dir(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("'" + dir + "' is not a directory");
    const std::string suffix = ".track.csv";
    std::vector<NamedTrack> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        auto [id, sample] = split_sample_name(name.substr(0, name.size() - suffix.size()));
        out.push_back({id, sample, read_track_file(e.path().string())});
    }
    std::sort(out.begin(), out.end(), [](const NamedTrack& a, const NamedTrack& b) {
        return a.id != b.id ? a.id < b.id : a.sample < b.sample;
    });
    if (out.empty()) throw FormatError("no *.track.csv files in '" + dir + "'");
    return out;
}

// Scores of one sampled track. Metrics that do not apply to the evaluated
// feature are NaN (f0 runs report vde/vfe, energy runs report enr).
struct SampleScore {
    std::string id;
    int sample = 0;
    std::size_t frames = 0;
    double vde = std::numeric_limits<double>::quiet_NaN();
    double vfe = std::numeric_limits<double>::quiet_NaN();
    std::size_t vfe_frames = 0;
    double enr = std::numeric_limits<double>::quiet_NaN();
};

inline SampleScore score_sample(const std::string& id, int sample, const SequenceTrack& ref, const SequenceTrack& pred,
                                bool energy) {
    if (ref.length() != pred.length()) {
        throw ContractError("'" + id + "' sample " + std::to_string(sample) + " has " + std::to_string(pred.length()) +
                            " frames, reference has " + std::to_string(ref.length()));
    }
    SampleScore s;
    s.id = id;
    s.sample = sample;
    s.frames = ref.length();
    if (energy) {
        s.enr = enr(pred.energy, ref.energy);
        return s;
    }
    s.vde = vde(pred.voiced, ref.voiced);
    // No frame voiced in both tracks: VFE is undefined for this sample.
    try {
        const ScoredMetric v = vfe_scored(pred.f0_hz, ref.f0_hz, ref.voiced);
        s.vfe = v.value;
        s.vfe_frames = v.frames;
    } catch (const DegenerateInputError&) {
    }
    return s;
}

struct MetricSummary {
    double mean = std::numeric_limits<double>::quiet_NaN();
    std::size_t frames = 0;
    std::vector<std::pair<std::string, double>> per_utterance;  // mean over that utterance's samples
};

struct EvalReport {
    bool energy = false;
    std::vector<SampleScore> scores;
    std::map<std::string, MetricSummary> metrics;
    std::optional<Moments> reference_moments;
    std::optional<Moments> sample_moments;
    std::size_t utterances = 0;
};

// Ids present on one side only.
struct IdMismatch {
    std::vector<std::string> missing_samples;    // reference ids without samples
    std::vector<std::string> missing_reference;  // sample ids without a reference
    bool empty() const { return missing_samples.empty() && missing_reference.empty(); }
};

inline IdMismatch match_ids(const std::vector<NamedTrack>& refs, const std::vector<NamedTrack>& samples) {
    std::vector<std::string> r, s;
    for (const auto& t : refs) r.push_back(t.id);
    for (const auto& t : samples) s.push_back(t.id);
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    IdMismatch m;
    std::set_difference(r.begin(), r.end(), s.begin(), s.end(), std::back_inserter(m.missing_samples));
    std::set_difference(s.begin(), s.end(), r.begin(), r.end(), std::back_inserter(m.missing_reference));
    return m;
}

namespace detail {
inline std::optional<Moments> try_moments(const std::vector<double>& x) {
    try {
        return moments(x);
    } catch (const DegenerateInputError&) {
        return std::nullopt;
    }
}
}  // namespace detail

inline EvalReport evaluate(const std::vector<NamedTrack>& refs, const std::vector<NamedTrack>& samples, bool energy) {
    const IdMismatch mm = match_ids(refs, samples);
    if (!mm.empty()) throw ContractError("reference and sample ids do not match");
    std::map<std::string, const SequenceTrack*> by_id;
    for (const auto& r : refs) {
        if (!by_id.emplace(r.id, &r.track).second) throw FormatError("duplicate reference id '" + r.id + "'");
    }
    EvalReport rep;
    rep.energy = energy;
    rep.utterances = by_id.size();
    for (const auto& s : samples) rep.scores.push_back(score_sample(s.id, s.sample, *by_id.at(s.id), s.track, energy));

    const std::vector<std::string> names = energy ? std::vector<std::string>{"enr"} : std::vector<std::string>{"vde", "vfe"};
    for (const auto& name : names) {
        MetricSummary& m = rep.metrics[name];
        std::map<std::string, std::pair<double, int>> acc;
        for (const auto& sc : rep.scores) {
            const double v = name == "vde" ? sc.vde : name == "vfe" ? sc.vfe : sc.enr;
            m.frames += name == "vfe" ? sc.vfe_frames : sc.frames;
            if (std::isnan(v)) continue;
            auto& a = acc[sc.id];
            a.first += v;
            a.second += 1;
        }
        double total = 0.0;
        for (const auto& [id, a] : acc) {
            m.per_utterance.emplace_back(id, a.first / a.second);
            total += m.per_utterance.back().second;
        }
        if (!m.per_utterance.empty()) m.mean = total / static_cast<double>(m.per_utterance.size());
    }
    if (!energy) {
        std::vector<SequenceTrack> r, s;
        for (const auto& [id, t] : by_id) r.push_back(*t);
        for (const auto& x : samples) s.push_back(x.track);
        rep.reference_moments = detail::try_moments(voiced_midi(r));
        rep.sample_moments = detail::try_moments(voiced_midi(s));
    }
    return rep;
}

namespace detail {
inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json moments_json(const std::optional<Moments>& m) {
    if (!m) return nullptr;
    return nlohmann::json{{"mu1", m->mu1}, {"mu2", m->mu2}, {"mu3", m->mu3}, {"mu4", m->mu4}, {"count", m->count}};
}
}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [name, m] : r.metrics) {
        nlohmann::json values = nlohmann::json::array();
        for (const auto& [id, v] : m.per_utterance) values.push_back({{"id", id}, {"value", v}});
        metrics[name] = {{"mean", detail::number_or_null(m.mean)}, {"frames", m.frames}, {"values", values}};
    }
    nlohmann::json out{{"feature", r.energy ? "energy" : "f0"},
                       {"utterances", r.utterances},
                       {"samples", r.scores.size()},
                       {"metrics", metrics}};
    if (!r.energy) {
        out["moments"] = {{"reference", detail::moments_json(r.reference_moments)},
                          {"samples", detail::moments_json(r.sample_moments)}};
    }
    return out;
}

// One row per sampled track; inapplicable metrics are left empty.
inline void write_metrics_csv(const std::string& path, const EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write '" + path + "'");
    auto cell = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
    out << "id,sample,vde,vfe,enr\n";
    for (const auto& s : r.scores) {
        out << s.id << ',' << s.sample << ',' << cell(s.vde) << ',' << cell(s.vfe) << ',' << cell(s.enr) << '\n';
    }
    if (!out) throw FormatError("write failed for '" + path + "'");
}

// Moments table: one row per source, columns mu1..mu4.
inline void write_moments_csv(const std::string& path, const EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write '" + path + "'");
    out << "source,mu1,mu2,mu3,mu4,count\n";
    auto row = [&](const char* name, const std::optional<Moments>& m) {
        out << name;
        if (m) {
            out << ',' << format_double(m->mu1) << ',' << format_double(m->mu2) << ',' << format_double(m->mu3) << ','
                << format_double(m->mu4) << ',' << m->count << '\n';
        } else {
            out << ",,,,,0\n";
        }
    };
    row("GT", r.reference_moments);
    row("samples", r.sample_moments);
    if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace pflow
