#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosodyflow/context/context.hpp"
#include "prosodyflow/eval/metrics.hpp"
#include "prosodyflow/prep/track.hpp"

namespace pflow {

// Synthetic prosody corpus. Voicing alternates in runs with geometric
// lengths, so the mask is a two-state Markov chain; the first frame's state is
// drawn from its stationary distribution. Phoneme ids split into three
// ranges: always-unvoiced, always-voiced, and mixed ids that can land in
// either kind of run.
struct SynthConfig {
    int utterances = 200;
    int min_frames = 150;
    int max_frames = 300;
    double mean_voiced_run = 25.0;
    double mean_unvoiced_run = 8.0;
    double f0_base_min = 100.0;   // Hz, per-utterance base pitch range
    double f0_base_max = 240.0;
    double drift_amp = 0.12;      // ln-Hz amplitude of slow contour movement
    double vibrato_amp = 0.02;    // ln-Hz
    double vibrato_rate = 5.5;    // Hz
    double f0_noise = 0.01;       // ln-Hz per frame
    double phoneme_pitch_spread = 0.05;  // ln-Hz offset per voiced phoneme id
    double f0_min = 80.0;
    double f0_max = 800.0;
    double energy_mean = 1.0;
    double energy_ar = 0.9;
    double energy_noise = 0.15;   // innovation std of log energy
    double unvoiced_energy_gain = 0.3;
    int vocab_size = 32;
    int unvoiced_ids = 8;         // ids [0, unvoiced_ids) are always unvoiced
    int mixed_ids = 4;            // the last mixed_ids ids appear in both run kinds
    double mixed_prob = 0.15;     // chance a phoneme in any run uses a mixed id
    int min_phoneme_frames = 3;
    int max_phoneme_frames = 10;
    double frame_rate = 80.0;
    std::uint64_t seed = 0;

    int voiced_ids() const { return vocab_size - unvoiced_ids - mixed_ids; }

    void validate() const {
        if (utterances < 1) throw ConfigError("utterances must be >= 1");
        if (min_frames < 2 || max_frames < min_frames) throw ConfigError("frame range must satisfy 2 <= min <= max");
        if (!(mean_voiced_run >= 1.0) || !(mean_unvoiced_run >= 1.0)) throw ConfigError("run-length means must be >= 1");
        if (mean_voiced_run > max_frames || mean_unvoiced_run > max_frames) {
            throw ConfigError("run-length mean exceeds the maximum utterance length");
        }
        if (!(f0_min > 0.0) || f0_max <= f0_min) throw ConfigError("f0 range must satisfy 0 < min < max");
        if (!(f0_base_min >= f0_min) || !(f0_base_max <= f0_max) || f0_base_max < f0_base_min) {
            throw ConfigError("f0 base range must lie inside the f0 range");
        }
        if (drift_amp < 0.0 || vibrato_amp < 0.0 || f0_noise < 0.0 || phoneme_pitch_spread < 0.0 || energy_noise < 0.0) {
            throw ConfigError("amplitudes and noise levels must be >= 0");
        }
        if (!(vibrato_rate >= 0.0) || !(frame_rate > 0.0)) throw ConfigError("rates must be positive");
        if (!(energy_mean > 0.0) || !(unvoiced_energy_gain > 0.0)) throw ConfigError("energy scales must be positive");
        if (!(std::abs(energy_ar) < 1.0)) throw ConfigError("energy AR coefficient must be in (-1, 1)");
        if (unvoiced_ids < 1 || mixed_ids < 0 || voiced_ids() < 1) {
            throw ConfigError("vocabulary needs at least one unvoiced and one voiced id");
        }
        if (!(mixed_prob >= 0.0 && mixed_prob <= 1.0)) throw ConfigError("mixed_prob must be in [0, 1]");
        if (mixed_ids == 0 && mixed_prob > 0.0) throw ConfigError("mixed_prob > 0 needs mixed_ids > 0");
        if (min_phoneme_frames < 1 || max_phoneme_frames < min_phoneme_frames) {
            throw ConfigError("phoneme duration range must satisfy 1 <= min <= max");
        }
    }

    // Stationary voiced fraction of the run-length chain.
    double expected_voiced_fraction() const { return mean_voiced_run / (mean_voiced_run + mean_unvoiced_run); }
};

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
    return nlohmann::json{{"utterances", c.utterances},
                          {"min_frames", c.min_frames},
                          {"max_frames", c.max_frames},
                          {"mean_voiced_run", c.mean_voiced_run},
                          {"mean_unvoiced_run", c.mean_unvoiced_run},
                          {"f0_base_min", c.f0_base_min},
                          {"f0_base_max", c.f0_base_max},
                          {"drift_amp", c.drift_amp},
                          {"vibrato_amp", c.vibrato_amp},
                          {"vibrato_rate", c.vibrato_rate},
                          {"f0_noise", c.f0_noise},
                          {"phoneme_pitch_spread", c.phoneme_pitch_spread},
                          {"f0_min", c.f0_min},
                          {"f0_max", c.f0_max},
                          {"energy_mean", c.energy_mean},
                          {"energy_ar", c.energy_ar},
                          {"energy_noise", c.energy_noise},
                          {"unvoiced_energy_gain", c.unvoiced_energy_gain},
                          {"vocab_size", c.vocab_size},
                          {"unvoiced_ids", c.unvoiced_ids},
                          {"mixed_ids", c.mixed_ids},
                          {"mixed_prob", c.mixed_prob},
                          {"min_phoneme_frames", c.min_phoneme_frames},
                          {"max_phoneme_frames", c.max_phoneme_frames},
                          {"frame_rate", c.frame_rate},
                          {"seed", c.seed}};
}

struct Utterance {
    std::string id;
    SequenceTrack track;
    PhonemeSeq phonemes;
};

namespace detail {

inline std::string utterance_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "utt%04d", i);
    return buf;
}

// Fixed per-id pitch offsets, drawn once from the corpus seed.
inline std::vector<double> phoneme_pitch_offsets(const SynthConfig& cfg) {
    std::seed_seq ss{cfg.seed, std::uint64_t{0xC0FFEE}};
    std::mt19937_64 rng(ss);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> off(static_cast<std::size_t>(cfg.vocab_size));
    for (double& o : off) o = cfg.phoneme_pitch_spread * nd(rng);
    return off;
}

inline Utterance gen_utterance(const SynthConfig& cfg, int index, const std::vector<double>& pitch_offset) {
    std::seed_seq ss{cfg.seed, static_cast<std::uint64_t>(index) + 1};
    std::mt19937_64 rng(ss);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int frames = std::uniform_int_distribution<int>(cfg.min_frames, cfg.max_frames)(rng);
    const auto n = static_cast<std::size_t>(frames);

    Utterance u;
    u.id = utterance_id(index);
    SequenceTrack& tr = u.track;
    tr.frame_rate = cfg.frame_rate;
    tr.voiced.assign(n, 0);
    tr.f0_hz.assign(n, 0.0);
    tr.energy.assign(n, 0.0);

    // Voicing runs, each split into phonemes.
    bool voiced = unif(rng) < cfg.expected_voiced_fraction();
    std::size_t t = 0;
    const int voiced_first = cfg.unvoiced_ids;
    const int mixed_first = cfg.vocab_size - cfg.mixed_ids;
    while (t < n) {
        const double p = 1.0 / (voiced ? cfg.mean_voiced_run : cfg.mean_unvoiced_run);
        const std::size_t run = std::min<std::size_t>(std::geometric_distribution<int>(p)(rng) + 1, n - t);
        std::size_t left = run;
        while (left > 0) {
            std::size_t d = static_cast<std::size_t>(
                std::uniform_int_distribution<int>(cfg.min_phoneme_frames, cfg.max_phoneme_frames)(rng));
            if (d >= left || left - d < static_cast<std::size_t>(cfg.min_phoneme_frames)) d = left;
            int id;
            if (cfg.mixed_ids > 0 && unif(rng) < cfg.mixed_prob) {
                id = std::uniform_int_distribution<int>(mixed_first, cfg.vocab_size - 1)(rng);
            } else if (voiced) {
                id = std::uniform_int_distribution<int>(voiced_first, mixed_first - 1)(rng);
            } else {
                id = std::uniform_int_distribution<int>(0, cfg.unvoiced_ids - 1)(rng);
            }
            u.phonemes.ids.push_back(id);
            u.phonemes.durations.push_back(static_cast<int>(d));
            for (std::size_t k = 0; k < d; ++k) tr.voiced[t + (run - left) + k] = voiced ? 1 : 0;
            left -= d;
        }
        t += run;
        voiced = !voiced;
    }

    // Pitch: base * exp(drift + vibrato + phoneme offset + noise), clamped.
    const double ln_base = std::log(cfg.f0_base_min) + unif(rng) * (std::log(cfg.f0_base_max) - std::log(cfg.f0_base_min));
    const double two_pi = 2.0 * std::numbers::pi;
    double drift_phase[2], drift_period[2];
    for (int k = 0; k < 2; ++k) {
        drift_phase[k] = two_pi * unif(rng);
        drift_period[k] = (k == 0 ? 1.5 : 0.6) * cfg.frame_rate * (0.75 + 0.5 * unif(rng));  // frames
    }
    const double vib_phase = two_pi * unif(rng);
    const std::vector<int> frame_ids = frame_phoneme_ids(u.phonemes);
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = static_cast<double>(i);
        const double drift = cfg.drift_amp * (0.7 * std::sin(two_pi * ti / drift_period[0] + drift_phase[0]) +
                                              0.3 * std::sin(two_pi * ti / drift_period[1] + drift_phase[1]));
        const double vib = cfg.vibrato_amp * std::sin(two_pi * cfg.vibrato_rate * ti / cfg.frame_rate + vib_phase);
        const double noise = cfg.f0_noise * nd(rng);
        if (!tr.voiced[i]) continue;
        const double ln_f0 = ln_base + drift + vib + pitch_offset[static_cast<std::size_t>(frame_ids[i])] + noise;
        tr.f0_hz[i] = std::clamp(std::exp(ln_f0), cfg.f0_min, cfg.f0_max);
    }

    // Energy: positive AR(1) process in the log domain, attenuated off-voice.
    const double stationary_sd = cfg.energy_noise / std::sqrt(1.0 - cfg.energy_ar * cfg.energy_ar);
    double x = stationary_sd * nd(rng);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) x = cfg.energy_ar * x + cfg.energy_noise * nd(rng);
        tr.energy[i] = cfg.energy_mean * std::exp(x) * (tr.voiced[i] ? 1.0 : cfg.unvoiced_energy_gain);
    }
    return u;
}

}  // namespace detail

inline std::vector<Utterance> gen_corpus(const SynthConfig& cfg) {
    cfg.validate();
    const auto offsets = detail::phoneme_pitch_offsets(cfg);
    std::vector<Utterance> out;
    out.reserve(static_cast<std::size_t>(cfg.utterances));
    for (int i = 0; i < cfg.utterances; ++i) {
        Utterance u = detail::gen_utterance(cfg, i, offsets);
        u.track.validate();
        u.phonemes.validate(cfg.vocab_size);
        out.push_back(std::move(u));
    }
    return out;
}

// Moments of the voiced midi notes over the whole corpus.
inline Moments gen_reference_moments(const std::vector<Utterance>& corpus) {
    if (corpus.empty()) throw EmptySequenceError("reference moments of an empty corpus");
    std::vector<SequenceTrack> tracks;
    for (const auto& u : corpus) tracks.push_back(u.track);
    return moments(voiced_midi(tracks));
}

// <dir>/<id>.track.csv and <dir>/<id>.phonemes.json per utterance.
inline std::string track_path(const std::string& dir, const std::string& id) {
    return (std::filesystem::path(dir) / (id + ".track.csv")).string();
}
inline std::string phoneme_path(const std::string& dir, const std::string& id) {
    return (std::filesystem::path(dir) / (id + ".phonemes.json")).string();
}

inline std::vector<std::string> write_corpus(const std::string& dir, const std::vector<Utterance>& corpus) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> files;
    for (const auto& u : corpus) {
        files.push_back(track_path(dir, u.id));
        write_track_file(files.back(), u.track);
        files.push_back(phoneme_path(dir, u.id));
        write_phoneme_file(files.back(), u.phonemes);
    }
    return files;
}

// Sorted ids of every *.track.csv in dir.
inline std::vector<std::string> list_track_ids(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("'" + dir + "' is not a directory");
    const std::string suffix = ".track.csv";
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            ids.push_back(name.substr(0, name.size() - suffix.size()));
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline std::vector<Utterance> read_corpus(const std::string& dir) {
    std::vector<Utterance> out;
    for (const auto& id : list_track_ids(dir)) {
        Utterance u;
        u.id = id;
        u.track = read_track_file(track_path(dir, id));
        u.phonemes = read_phoneme_file(phoneme_path(dir, id));
        out.push_back(std::move(u));
    }
    if (out.empty()) throw FormatError("no *.track.csv files in '" + dir + "'");
    return out;
}

}  // namespace pflow
