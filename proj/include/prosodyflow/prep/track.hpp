#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prosodyflow/errors.hpp"

namespace pflow {

// One utterance of frame-level prosody. f0_hz is 0 on unvoiced frames.
struct SequenceTrack {
    std::vector<double> f0_hz;
    std::vector<int> voiced;
    std::vector<double> energy;
    double frame_rate = 80.0;

    std::size_t length() const { return f0_hz.size(); }

    void validate() const {
        const std::size_t n = f0_hz.size();
        if (n == 0) throw DataError("track has no frames");
        if (voiced.size() != n || energy.size() != n) throw DataError("track channels have different lengths");
        if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) throw DataError("frame_rate must be positive");
        for (std::size_t t = 0; t < n; ++t) {
            if (!std::isfinite(f0_hz[t]) || !std::isfinite(energy[t])) {
                throw DataError("non-finite value at frame " + std::to_string(t));
            }
            if (voiced[t] != 0 && voiced[t] != 1) throw DataError("voiced flag must be 0/1 at frame " + std::to_string(t));
            if ((f0_hz[t] > 0.0) != (voiced[t] == 1)) {
                throw DataError("f0 > 0 must coincide with voiced at frame " + std::to_string(t));
            }
            if (f0_hz[t] < 0.0) throw DataError("negative f0 at frame " + std::to_string(t));
        }
    }
};

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Track file: "frame_rate=<float>" then one "t,f0_hz,voiced,energy" row per
// frame with t counting from 0.
inline void write_track(std::ostream& out, const SequenceTrack& tr) {
    out << "frame_rate=" << format_double(tr.frame_rate) << "\n";
    for (std::size_t t = 0; t < tr.length(); ++t) {
        out << t << "," << format_double(tr.f0_hz[t]) << "," << tr.voiced[t] << "," << format_double(tr.energy[t]) << "\n";
    }
}

inline void write_track_file(const std::string& path, const SequenceTrack& tr) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_track(out, tr);
    if (!out) throw FormatError("write failed for '" + path + "'");
}

namespace detail {
inline double parse_double_strict(const std::string& s, const std::string& where) {
    if (s.empty()) throw FormatError(where + ": empty field");
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw FormatError(where + ": '" + s + "' is not a number");
    }
    if (pos != s.size()) throw FormatError(where + ": trailing characters in '" + s + "'");
    return v;
}

inline long parse_int_strict(const std::string& s, const std::string& where) {
    if (s.empty()) throw FormatError(where + ": empty field");
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
        throw FormatError(where + ": '" + s + "' is not an integer");
    }
    if (pos != s.size()) throw FormatError(where + ": trailing characters in '" + s + "'");
    return v;
}
}  // namespace detail

inline SequenceTrack read_track(std::istream& in, const std::string& name = "track") {
    SequenceTrack tr;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw FormatError(name + ": empty file");
    ++line_no;
    const std::string key = "frame_rate=";
    if (line.rfind(key, 0) != 0) throw FormatError(name + ":1: expected 'frame_rate=<float>'");
    tr.frame_rate = detail::parse_double_strict(line.substr(key.size()), name + ":1");
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = name + ":" + std::to_string(line_no);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (fields.size() != 4) throw FormatError(where + ": expected 4 fields t,f0_hz,voiced,energy");
        const long t = detail::parse_int_strict(fields[0], where);
        if (t != static_cast<long>(tr.f0_hz.size())) throw FormatError(where + ": frame index out of sequence");
        const double f0 = detail::parse_double_strict(fields[1], where);
        const long v = detail::parse_int_strict(fields[2], where);
        if (v != 0 && v != 1) throw FormatError(where + ": voiced must be 0 or 1");
        const double e = detail::parse_double_strict(fields[3], where);
        if (!std::isfinite(f0) || !std::isfinite(e)) throw FormatError(where + ": non-finite value");
        if ((f0 > 0.0) != (v == 1) || f0 < 0.0) throw FormatError(where + ": f0 and voiced flag disagree");
        tr.f0_hz.push_back(f0);
        tr.voiced.push_back(static_cast<int>(v));
        tr.energy.push_back(e);
    }
    if (tr.f0_hz.empty()) throw FormatError(name + ": no frames");
    try {
        tr.validate();
    } catch (const DataError& e) {
        throw FormatError(name + ": " + e.what());
    }
    return tr;
}

inline SequenceTrack read_track_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return read_track(in, path);
}

}  // namespace pflow
