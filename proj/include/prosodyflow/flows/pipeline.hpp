#pragma once

#include <random>
#include <string>
#include <vector>

#include "prosodyflow/context/context.hpp"
#include "prosodyflow/eval/metrics.hpp"
#include "prosodyflow/flows/agap.hpp"
#include "prosodyflow/flows/bgap.hpp"
#include "prosodyflow/prep/cwt.hpp"
#include "prosodyflow/prep/features.hpp"
#include "prosodyflow/prep/group.hpp"

namespace pflow {

namespace op {

// Tape form of centered_diff on a [T x 1] column.
inline Var centered_diff(Var x, double kappa) {
    if (x.cols() != 1) throw DimensionError("centered_diff expects a column, got " + shape_str(x.value()));
    const Eigen::Index n = x.rows();
    if (n < 2) throw DimensionError("centered_diff needs at least 2 frames");
    const Mat& xv = x.value();
    const std::vector<double> d = pflow::centered_diff(std::vector<double>(xv.data(), xv.data() + n), kappa);
    Mat out = Eigen::Map<const Mat>(d.data(), n, 1);
    Graph& g = *x.graph;
    return g.make(std::move(out), {x}, [x, n, kappa](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        Mat gx = Mat::Zero(n, 1);
        for (Eigen::Index t = 1; t + 1 < n; ++t) {
            gx(t + 1, 0) += go(t, 0) / kappa;
            gx(t - 1, 0) -= go(t, 0) / kappa;
        }
        const double e = 2.0 / kappa;
        gx(1, 0) += go(0, 0) * e;
        gx(0, 0) -= go(0, 0) * e;
        gx(n - 1, 0) += go(n - 1, 0) * e;
        gx(n - 2, 0) -= go(n - 1, 0) * e;
        g.accumulate(x, gx);
    }, "centered_diff");
}

// Tape form of group(): [T x F] frames to [ceil(T/N) x N*F].
inline Var group_frames(Var frames, int group_size) {
    const auto idx = group_frame_index(static_cast<std::size_t>(frames.rows()), group_size);
    const Eigen::Index groups = static_cast<Eigen::Index>(idx.size()) / group_size;
    return reshape(gather_rows(frames, idx), groups, group_size * frames.cols());
}

}  // namespace op

inline PreprocConfig preproc_config(const FlowConfig& cfg) {
    PreprocConfig p;
    p.group_size = cfg.group_size;
    p.diff_scale = cfg.diff_scale;
    p.f0_divisor = cfg.f0_divisor;
    p.energy_diff_gain = cfg.energy_diff_gain;
    switch (cfg.filler) {
    case FillerKind::dtx: p.filler = Filler::distance_transform; break;
    case FillerKind::interp: p.filler = Filler::linear_interp; break;
    case FillerKind::bias:
    case FillerKind::none: p.filler = Filler::none; break;
    }
    return p;
}

// Everything about one utterance that does not depend on trainable
// parameters.
struct PreparedUtterance {
    std::string id;
    PhonemeSeq seq;
    std::vector<int> voiced;  // ground-truth frame mask
    std::size_t frames = 0;
    Mat features;               // [T x F] fixed frame features (unused by the bias filler)
    Mat log_f0;                 // [T x 1] ln f0, 0 on unvoiced frames
    Mat value_scale;            // [T x 1] 1/divisor on voiced frames, 1 elsewhere
    std::size_t groups = 0;
};

inline PreparedUtterance prepare_utterance(const SequenceTrack& track, const PhonemeSeq& seq, const FlowConfig& cfg,
                                           std::string id = {}) {
    cfg.validate();
    track.validate();
    seq.validate(cfg.vocab_size);
    if (seq.total_frames() != track.length()) {
        throw ContractError("phoneme durations sum to " + std::to_string(seq.total_frames()) + " but track has " +
                            std::to_string(track.length()) + " frames");
    }
    PreparedUtterance u;
    u.id = std::move(id);
    u.seq = seq;
    u.voiced = track.voiced;
    u.frames = track.length();
    u.groups = (u.frames + static_cast<std::size_t>(cfg.group_size) - 1) / static_cast<std::size_t>(cfg.group_size);
    const PreprocConfig pc = preproc_config(cfg);
    const std::vector<double> ln = log_f0(track);
    u.log_f0 = to_column(ln);
    u.value_scale = Mat::Ones(static_cast<Eigen::Index>(u.frames), 1);
    for (std::size_t t = 0; t < u.frames; ++t) {
        if (track.voiced[t]) u.value_scale(static_cast<Eigen::Index>(t), 0) = 1.0 / cfg.f0_divisor;
    }
    if (cfg.feature == FeatureKind::energy) {
        const ScaledFeature e = scale_energy(track, pc);
        u.features.resize(static_cast<Eigen::Index>(u.frames), 2);
        u.features << to_column(e.value), to_column(e.diff);
    } else if (cfg.aux == AuxKind::cwt) {
        std::vector<double> scaled(ln.size());
        for (std::size_t t = 0; t < ln.size(); ++t) scaled[t] = ln[t] / cfg.f0_divisor;
        u.features = cwt_encode(scaled, track.voiced);
    } else if (cfg.filler != FillerKind::bias) {
        const ScaledFeature f = scale_f0(track, pc);
        u.features.resize(static_cast<Eigen::Index>(u.frames), 2);
        u.features << to_column(f.value), to_column(f.diff);
    }
    return u;
}

inline bool uses_trainable_filler(const FlowConfig& cfg) {
    return cfg.feature == FeatureKind::f0 && cfg.aux == AuxKind::diff && cfg.filler == FillerKind::bias;
}

// Grouped data tensor [G x D] for one utterance.
inline Var utterance_data(Graph& g, ParameterStore& store, const FlowConfig& cfg, const PreparedUtterance& u) {
    Var frames;
    if (uses_trainable_filler(cfg)) {
        const UnvoicedBias bias(cfg.context_channels);
        Var filled = op::add(g.constant(u.log_f0),
                             bias.frame_bias(g, store, g.param(store, kEmbeddingName), u.seq, u.voiced));
        Var diff = op::centered_diff(filled, cfg.diff_scale);
        Var value = op::mul(filled, g.constant(u.value_scale));
        frames = op::concat_cols({value, diff});
    } else {
        frames = g.constant(u.features);
    }
    return op::group_frames(frames, cfg.group_size);
}

// Frame-level phoneme embeddings [T x C].
inline Var utterance_phi(Graph& g, ParameterStore& store, const PhonemeSeq& seq) {
    return build_phi_text(g.param(store, kEmbeddingName), seq);
}

// Grouped (optionally voiced-merged) context [G x N*C] aligned with the data.
inline Var utterance_context(Graph& g, ParameterStore& store, const FlowConfig& cfg, Var phi,
                             const std::vector<int>& voiced) {
    Var ctx = cfg.voiced_context ? voiced_merge(g, store, phi, voiced) : phi;
    return op::group_frames(ctx, cfg.group_size);
}

// Parameter-free view: grouped data and grouped merged context for one
// utterance, using the ground-truth voicing mask.
struct AssembledPair {
    ModelInputTensor x;
    Mat context;
};

inline AssembledPair assemble_f0_pipeline(const SequenceTrack& track, const PhonemeSeq& seq, const FlowConfig& cfg,
                                          const ParameterStore& store) {
    const PreparedUtterance u = prepare_utterance(track, seq, cfg);
    Graph g(false);
    auto& s = const_cast<ParameterStore&>(store);  // gradients are disabled
    AssembledPair out;
    out.x.values = utterance_data(g, s, cfg, u).value();
    out.x.original_length = u.frames;
    out.x.layout = ChannelLayout{cfg.group_size, cfg.frame_channels()};
    out.context = utterance_context(g, s, cfg, utterance_phi(g, s, seq), u.voiced).value();
    return out;
}

// Model facade: configuration plus every trainable parameter.
struct FlowModel {
    FlowConfig cfg;
    ParameterStore params;

    VoicedClassifier classifier() const { return VoicedClassifier(cfg.context_channels, cfg.classifier_hidden); }
    BgapModel bgap() const { return BgapModel(cfg); }
    AgapModel agap() const { return AgapModel(cfg); }

    template <class Rng>
    static FlowModel create(const FlowConfig& cfg, Rng& rng) {
        cfg.validate();
        FlowModel m;
        m.cfg = cfg;
        init_embedding(m.params, cfg.vocab_size, cfg.context_channels, rng);
        m.classifier().init(m.params, rng);
        VoicedMerge{cfg.context_channels}.init(m.params);
        if (uses_trainable_filler(cfg)) UnvoicedBias(cfg.context_channels).init(m.params, rng);
        if (cfg.kind == ModelKind::bgap) m.bgap().init(m.params, rng);
        else m.agap().init(m.params, rng);
        return m;
    }

    FlowOutput forward(Graph& g, Var x, Var ctx, int batch = 1) {
        return cfg.kind == ModelKind::bgap ? bgap().forward(g, params, x, ctx) : agap().forward(g, params, x, ctx, batch);
    }

    Mat inverse(const Mat& z, const Mat& ctx, int batch = 1) const {
        return cfg.kind == ModelKind::bgap ? bgap().inverse(params, z, ctx) : agap().inverse(params, z, ctx, batch);
    }

    // Frame voicing predicted from text alone.
    std::vector<int> predict_voicing(const PhonemeSeq& seq) const {
        seq.validate(cfg.vocab_size);
        return threshold_voiced(voiced_probabilities(params, classifier(), build_phi_text(seq, params.at(kEmbeddingName).value).phi));
    }

    Mat grouped_context(const PhonemeSeq& seq, const std::vector<int>& voiced) const {
        Graph g(false);
        auto& s = const_cast<ParameterStore&>(params);
        return utterance_context(g, s, cfg, utterance_phi(g, s, seq), voiced).value();
    }
};

struct SamplingConfig {
    double sigma = 1.0;
    int num_samples = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be a finite value >= 0");
        if (num_samples < 1) throw ConfigError("num_samples must be >= 1");
    }
};

// Draws num_samples sequences for one utterance. Returns ungrouped frame
// features [T x F] per sample.
template <class Rng>
std::vector<Mat> sample_frames(const FlowModel& model, const PhonemeSeq& seq, const std::vector<int>& voiced,
                               const SamplingConfig& sc, Rng& rng) {
    sc.validate();
    const FlowConfig& cfg = model.cfg;
    const Mat ctx = model.grouped_context(seq, voiced);
    const Eigen::Index groups = ctx.rows();
    const int s_count = sc.num_samples;
    const Eigen::Index dims = cfg.data_channels();
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat z(groups * s_count, dims);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = sc.sigma * nd(rng);

    // BGAP stacks samples block-wise; AGAP needs a time-major batch.
    const bool time_major = cfg.kind == ModelKind::agap;
    Mat ctx_b(groups * s_count, ctx.cols());
    for (int s = 0; s < s_count; ++s) {
        for (Eigen::Index t = 0; t < groups; ++t) ctx_b.row(time_major ? t * s_count + s : s * groups + t) = ctx.row(t);
    }
    const Mat x = model.inverse(z, ctx_b, time_major ? s_count : 1);
    std::vector<Mat> out;
    for (int s = 0; s < s_count; ++s) {
        ModelInputTensor mt;
        mt.values.resize(groups, dims);
        for (Eigen::Index t = 0; t < groups; ++t) mt.values.row(t) = x.row(time_major ? t * s_count + s : s * groups + t);
        mt.original_length = seq.total_frames();
        mt.layout = ChannelLayout{cfg.group_size, cfg.frame_channels()};
        out.push_back(ungroup(mt));
    }
    return out;
}

// Ungrouped sampled frames [T x F] back to a track. Filler-based f0 models
// are thresholded; interpolated and CWT features carry no unvoiced signal, so
// those take voicing from the mask used for conditioning. Energy samples are
// clamped at 0 and leave f0 at 0.
inline SequenceTrack frames_to_track(const FlowConfig& cfg, const Mat& frames, const std::vector<int>& voiced,
                                     double frame_rate = 80.0) {
    const std::size_t n = static_cast<std::size_t>(frames.rows());
    if (voiced.size() != n) {
        throw ContractError("frames_to_track: " + std::to_string(n) + " frames but mask has " + std::to_string(voiced.size()));
    }
    if (frames.cols() != cfg.frame_channels()) throw DimensionError("frames_to_track: unexpected channel count " + shape_str(frames));
    if (cfg.feature == FeatureKind::energy) {
        SequenceTrack tr;
        tr.frame_rate = frame_rate;
        tr.f0_hz.assign(n, 0.0);
        tr.voiced.assign(n, 0);
        tr.energy.resize(n);
        for (std::size_t t = 0; t < n; ++t) tr.energy[t] = std::max(0.0, frames(static_cast<Eigen::Index>(t), 0));
        return tr;
    }
    std::vector<double> value;
    if (cfg.aux == AuxKind::cwt) {
        value = cwt_decode(frames);
    } else {
        value = to_vector(frames.col(0));
    }
    if (cfg.aux == AuxKind::diff && cfg.filler != FillerKind::interp) {
        return threshold_sampled_track(value, frame_rate, kVoicedThreshold, cfg.f0_divisor);
    }
    SequenceTrack tr;
    tr.frame_rate = frame_rate;
    tr.f0_hz.assign(n, 0.0);
    tr.voiced.assign(n, 0);
    tr.energy.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        if (!voiced[t]) continue;
        const double f = std::exp(value[t] * cfg.f0_divisor);
        if (std::isfinite(f) && f > 0.0) {
            tr.voiced[t] = 1;
            tr.f0_hz[t] = f;
        }
    }
    return tr;
}

}  // namespace pflow
