#pragma once

#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosodyflow/dcore/layers.hpp"

namespace pflow {

struct PhonemeSeq {
    std::vector<int> ids;
    std::vector<int> durations;

    std::size_t total_frames() const {
        std::size_t n = 0;
        for (int d : durations) n += static_cast<std::size_t>(std::max(d, 0));
        return n;
    }

    void validate(int vocab_size = -1) const {
        if (ids.empty()) throw DataError("phoneme sequence is empty");
        if (ids.size() != durations.size()) throw DataError("ids and durations differ in length");
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (durations[p] <= 0) throw DataError("phoneme " + std::to_string(p) + " has non-positive duration");
            if (ids[p] < 0 || (vocab_size >= 0 && ids[p] >= vocab_size)) {
                throw VocabularyError("phoneme id " + std::to_string(ids[p]) + " outside vocabulary of size " +
                                      std::to_string(vocab_size));
            }
        }
    }
};

inline nlohmann::json phonemes_to_json(const PhonemeSeq& seq) {
    return nlohmann::json{{"ids", seq.ids}, {"durations", seq.durations}};
}

inline PhonemeSeq phonemes_from_json(const nlohmann::json& j, const std::string& name = "phonemes") {
    try {
        PhonemeSeq seq;
        seq.ids = j.at("ids").get<std::vector<int>>();
        seq.durations = j.at("durations").get<std::vector<int>>();
        seq.validate();
        return seq;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(name + ": " + e.what());
    } catch (const DataError& e) {
        throw FormatError(name + ": " + e.what());
    }
}

inline void write_phoneme_file(const std::string& path, const PhonemeSeq& seq) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << phonemes_to_json(seq).dump() << "\n";
}

inline PhonemeSeq read_phoneme_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return phonemes_from_json(j, path);
}

// Index of the phoneme active at each frame.
inline std::vector<int> frame_phoneme_index(const PhonemeSeq& seq) {
    std::vector<int> idx;
    idx.reserve(seq.total_frames());
    for (std::size_t p = 0; p < seq.ids.size(); ++p) {
        if (seq.durations[p] <= 0) throw DataError("phoneme " + std::to_string(p) + " has non-positive duration");
        idx.insert(idx.end(), static_cast<std::size_t>(seq.durations[p]), static_cast<int>(p));
    }
    return idx;
}

// Phoneme id active at each frame.
inline std::vector<int> frame_phoneme_ids(const PhonemeSeq& seq) {
    std::vector<int> ids;
    for (int p : frame_phoneme_index(seq)) ids.push_back(seq.ids[static_cast<std::size_t>(p)]);
    return ids;
}

// Text context stored time-major: row t is the embedding of the phoneme
// active at frame t.
struct ConditioningContext {
    Mat phi;                  // [T x C]
    std::vector<int> voiced;  // [T]
};

inline constexpr const char* kEmbeddingName = "context.embedding";

template <class Rng>
void init_embedding(ParameterStore& store, int vocab_size, int channels, Rng& rng) {
    if (vocab_size <= 0 || channels <= 0) throw ConfigError("embedding needs positive vocabulary and channels");
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat e(vocab_size, channels);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = nd(rng);
    store.add(kEmbeddingName, std::move(e));
}

inline Var build_phi_text(Var embedding, const PhonemeSeq& seq) {
    seq.validate(static_cast<int>(embedding.rows()));
    return op::gather_rows(embedding, frame_phoneme_ids(seq));
}

inline ConditioningContext build_phi_text(const PhonemeSeq& seq, const Mat& embedding) {
    Graph g(false);
    ConditioningContext ctx;
    ctx.phi = build_phi_text(g.constant(embedding), seq).value();
    return ctx;
}

// Two dense layers over each context row, giving one voicing logit per frame.
struct VoicedClassifier {
    DenseLayer hidden;
    DenseLayer head;

    VoicedClassifier(int channels = 1, int hidden_size = 16)
        : hidden{"classifier.hidden", channels, hidden_size, Activation::tanh},
          head{"classifier.head", hidden_size, 1, Activation::identity} {}

    template <class Rng>
    void init(ParameterStore& store, Rng& rng) const {
        hidden.init(store, rng);
        head.init(store, rng);
    }

    Var logits(Graph& g, ParameterStore& store, Var phi) const {
        return dense_apply(g, store, head, dense_apply(g, store, hidden, phi));
    }
};

// Probability >= 0.5 counts as voiced.
inline std::vector<int> threshold_voiced(const Mat& probabilities) {
    std::vector<int> mask(static_cast<std::size_t>(probabilities.size()));
    for (Eigen::Index i = 0; i < probabilities.size(); ++i) mask[static_cast<std::size_t>(i)] = probabilities.data()[i] >= 0.5;
    return mask;
}

inline Mat voiced_probabilities(const ParameterStore& store, const VoicedClassifier& cls, const Mat& phi) {
    Graph g(false);
    auto& s = const_cast<ParameterStore&>(store);  // read-only: grad disabled
    return op::sigmoid(cls.logits(g, s, g.constant(phi))).value();
}

inline std::vector<int> predict_voiced(const ParameterStore& store, const VoicedClassifier& cls,
                                       const ConditioningContext& ctx) {
    return threshold_voiced(voiced_probabilities(store, cls, ctx.phi));
}

inline Var classifier_loss(Graph& g, ParameterStore& store, const VoicedClassifier& cls, Var phi,
                           const std::vector<int>& voiced) {
    if (static_cast<Eigen::Index>(voiced.size()) != phi.rows()) throw ContractError("voiced mask length differs from context");
    Mat target(phi.rows(), 1);
    for (Eigen::Index t = 0; t < phi.rows(); ++t) target(t, 0) = voiced[static_cast<std::size_t>(t)];
    return op::bce_with_logits(cls.logits(g, store, phi), target);
}

// Voiced-aware modulation. "context.merge.scale" rows are (s_voiced,
// s_unvoiced); "context.merge.shift" rows are (b_voiced, b_unvoiced).
struct VoicedMerge {
    int channels = 1;

    static constexpr const char* scale_name = "context.merge.scale";
    static constexpr const char* shift_name = "context.merge.shift";

    void init(ParameterStore& store) const {
        store.add(scale_name, Mat::Zero(2, channels));
        store.add(shift_name, Mat::Zero(2, channels));
    }
};

inline Mat voiced_selector(const std::vector<int>& voiced) {
    Mat sel(static_cast<Eigen::Index>(voiced.size()), 2);
    for (std::size_t t = 0; t < voiced.size(); ++t) {
        const double v = voiced[t] ? 1.0 : 0.0;
        sel(static_cast<Eigen::Index>(t), 0) = v;
        sel(static_cast<Eigen::Index>(t), 1) = 1.0 - v;
    }
    return sel;
}

inline Var voiced_merge(Graph& g, ParameterStore& store, Var phi, const std::vector<int>& voiced) {
    if (static_cast<Eigen::Index>(voiced.size()) != phi.rows()) throw ContractError("voiced mask length differs from context");
    Var sel = g.constant(voiced_selector(voiced));
    Var alpha = op::sigmoid(op::matmul(sel, g.param(store, VoicedMerge::scale_name)));
    Var beta = op::tanh(op::matmul(sel, g.param(store, VoicedMerge::shift_name)));
    return op::add(op::mul(alpha, phi), op::scale(beta, 0.01));
}

inline Mat voiced_merge(const ParameterStore& store, const ConditioningContext& ctx) {
    Graph g(false);
    auto& s = const_cast<ParameterStore&>(store);
    return voiced_merge(g, s, g.constant(ctx.phi), ctx.voiced).value();
}

// Per-phoneme non-positive offset b_p = -relu(head(embedding_p)), applied to
// unvoiced frames only.
struct UnvoicedBias {
    DenseLayer head;

    explicit UnvoicedBias(int channels = 1) : head{"context.unvoiced_bias", channels, 1, Activation::identity} {}

    template <class Rng>
    void init(ParameterStore& store, Rng& rng) const {
        head.init(store, rng);
        // Start with a clearly negative offset so fillers sit below voiced values.
        store.at(head.bias_name()).value.setConstant(1.0);
    }

    // Per-frame bias column [T x 1], zero on voiced frames.
    Var frame_bias(Graph& g, ParameterStore& store, Var embedding, const PhonemeSeq& seq,
                   const std::vector<int>& voiced) const {
        if (seq.total_frames() != voiced.size()) throw ContractError("phoneme durations do not cover the voiced mask");
        seq.validate(static_cast<int>(embedding.rows()));
        Var per_phoneme = op::neg(op::relu(dense_apply(g, store, head, op::gather_rows(embedding, seq.ids))));
        const auto owner = frame_phoneme_index(seq);
        std::vector<int> idx(owner.size());
        for (std::size_t t = 0; t < owner.size(); ++t) idx[t] = voiced[t] ? -1 : owner[t];
        return op::gather_rows(per_phoneme, idx);
    }
};

inline Var apply_unvoiced_bias(Graph& g, ParameterStore& store, const UnvoicedBias& bias, Var embedding, Var f0_log,
                               const PhonemeSeq& seq, const std::vector<int>& voiced) {
    if (f0_log.cols() != 1 || static_cast<std::size_t>(f0_log.rows()) != voiced.size()) {
        throw ContractError("apply_unvoiced_bias expects a [T x 1] signal matching the mask");
    }
    return op::add(f0_log, bias.frame_bias(g, store, embedding, seq, voiced));
}

inline std::vector<double> apply_unvoiced_bias(const ParameterStore& store, const UnvoicedBias& bias,
                                               const std::vector<double>& f0_log, const PhonemeSeq& seq,
                                               const std::vector<int>& voiced) {
    Graph g(false);
    auto& s = const_cast<ParameterStore&>(store);
    Var emb = g.param(s, kEmbeddingName);
    Mat col = Eigen::Map<const Mat>(f0_log.data(), static_cast<Eigen::Index>(f0_log.size()), 1);
    const Mat out = apply_unvoiced_bias(g, s, bias, emb, g.constant(col), seq, voiced).value();
    return std::vector<double>(out.data(), out.data() + out.size());
}

}  // namespace pflow
