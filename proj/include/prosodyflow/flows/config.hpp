#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prosodyflow/coupling/spline.hpp"
#include "prosodyflow/errors.hpp"

namespace pflow {

enum class ModelKind { bgap, agap };
enum class FeatureKind { f0, energy };
enum class AuxKind { diff, cwt };
enum class FillerKind { dtx, bias, interp, none };
enum class CouplingKind { affine, spline };

namespace detail {
template <class E>
struct EnumNames;

template <>
struct EnumNames<ModelKind> {
    static constexpr std::pair<ModelKind, const char*> table[] = {{ModelKind::bgap, "bgap"}, {ModelKind::agap, "agap"}};
};
template <>
struct EnumNames<FeatureKind> {
    static constexpr std::pair<FeatureKind, const char*> table[] = {{FeatureKind::f0, "f0"},
                                                                    {FeatureKind::energy, "energy"}};
};
template <>
struct EnumNames<AuxKind> {
    static constexpr std::pair<AuxKind, const char*> table[] = {{AuxKind::diff, "diff"}, {AuxKind::cwt, "cwt"}};
};
template <>
struct EnumNames<FillerKind> {
    static constexpr std::pair<FillerKind, const char*> table[] = {
        {FillerKind::dtx, "dtx"}, {FillerKind::bias, "bias"}, {FillerKind::interp, "interp"}, {FillerKind::none, "none"}};
};
template <>
struct EnumNames<CouplingKind> {
    static constexpr std::pair<CouplingKind, const char*> table[] = {{CouplingKind::affine, "affine"},
                                                                     {CouplingKind::spline, "spline"}};
};
}  // namespace detail

template <class E>
std::string to_string(E e) {
    for (const auto& [v, name] : detail::EnumNames<E>::table) {
        if (v == e) return name;
    }
    return "?";
}

template <class E>
E parse_enum(const std::string& s, const char* what) {
    std::string options;
    for (const auto& [v, name] : detail::EnumNames<E>::table) {
        if (s == name) return v;
        options += options.empty() ? name : std::string("|") + name;
    }
    throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected " + options + ")");
}

struct FlowConfig {
    ModelKind kind = ModelKind::bgap;
    FeatureKind feature = FeatureKind::f0;
    AuxKind aux = AuxKind::diff;
    FillerKind filler = FillerKind::dtx;
    std::vector<CouplingKind> couplings;  // one per flow step, data side first
    double bound = 3.0;
    int bins = 24;
    int group_size = 2;
    int vocab_size = 32;
    int context_channels = 8;
    int hidden = 32;             // BGAP predictor width / AGAP LSTM width
    int classifier_hidden = 16;
    bool voiced_context = true;
    double diff_scale = 2.0;
    double f0_divisor = 6.0;
    double energy_diff_gain = 10.0;

    int steps() const { return static_cast<int>(couplings.size()); }

    // Channels per frame before grouping.
    int frame_channels() const { return aux == AuxKind::cwt ? 12 : 2; }
    int data_channels() const { return group_size * frame_channels(); }
    int grouped_context_channels() const { return group_size * context_channels; }

    SplineShape spline_shape() const { return SplineShape{bound, bins}; }

    void validate() const {
        if (couplings.empty()) throw ConfigError("model needs at least one flow step");
        if (kind == ModelKind::agap && couplings.size() != 2) throw ConfigError("agap uses exactly 2 flow steps");
        if (group_size < 1) throw ConfigError("group_size must be >= 1");
        if (vocab_size < 1 || context_channels < 1 || hidden < 1 || classifier_hidden < 1) {
            throw ConfigError("model sizes must be positive");
        }
        if (feature == FeatureKind::energy && aux == AuxKind::cwt) throw ConfigError("cwt features apply to f0 only");
        if (!(diff_scale > 0.0) || !(f0_divisor > 0.0) || !(energy_diff_gain > 0.0)) {
            throw ConfigError("feature scales must be positive");
        }
        spline_shape().validate();
    }

    // Presets. coupling_mode is affine, spline, or hybrid (BGAP: affine on
    // the 2 steps nearest the data, spline on the 4 nearest the latent).
    static FlowConfig preset(ModelKind kind, FeatureKind feature = FeatureKind::f0, AuxKind aux = AuxKind::diff,
                             const std::string& coupling_mode = "hybrid") {
        FlowConfig c;
        c.kind = kind;
        c.feature = feature;
        c.aux = aux;
        c.group_size = feature == FeatureKind::energy ? 4 : 2;
        const int steps = kind == ModelKind::bgap ? 6 : 2;
        c.bound = kind == ModelKind::bgap ? 3.0 : 6.0;
        c.filler = kind == ModelKind::bgap ? FillerKind::dtx : FillerKind::bias;
        if (coupling_mode == "affine") {
            c.couplings.assign(steps, CouplingKind::affine);
        } else if (coupling_mode == "spline") {
            c.couplings.assign(steps, CouplingKind::spline);
        } else if (coupling_mode == "hybrid") {
            c.couplings.assign(steps, CouplingKind::spline);
            const int affine_steps = kind == ModelKind::bgap ? 2 : 1;
            for (int k = 0; k < affine_steps; ++k) c.couplings[k] = CouplingKind::affine;
        } else {
            throw ConfigError("unknown coupling mode '" + coupling_mode + "' (expected affine|spline|hybrid)");
        }
        return c;
    }
};

inline nlohmann::json config_to_json(const FlowConfig& c) {
    nlohmann::json steps = nlohmann::json::array();
    for (CouplingKind k : c.couplings) steps.push_back(to_string(k));
    return nlohmann::json{{"kind", to_string(c.kind)},
                          {"feature", to_string(c.feature)},
                          {"aux", to_string(c.aux)},
                          {"filler", to_string(c.filler)},
                          {"couplings", steps},
                          {"bound", c.bound},
                          {"bins", c.bins},
                          {"group_size", c.group_size},
                          {"vocab_size", c.vocab_size},
                          {"context_channels", c.context_channels},
                          {"hidden", c.hidden},
                          {"classifier_hidden", c.classifier_hidden},
                          {"voiced_context", c.voiced_context},
                          {"diff_scale", c.diff_scale},
                          {"f0_divisor", c.f0_divisor},
                          {"energy_diff_gain", c.energy_diff_gain}};
}

inline FlowConfig config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "kind", "feature", "aux", "filler", "couplings", "bound", "bins", "group_size", "vocab_size",
        "context_channels", "hidden", "classifier_hidden", "voiced_context", "diff_scale", "f0_divisor",
        "energy_diff_gain"};
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("unknown model config key '" + key + "'");
        }
    }
    try {
        FlowConfig c;
        c.kind = parse_enum<ModelKind>(j.at("kind").get<std::string>(), "model kind");
        c.feature = parse_enum<FeatureKind>(j.at("feature").get<std::string>(), "feature");
        c.aux = parse_enum<AuxKind>(j.at("aux").get<std::string>(), "aux feature");
        c.filler = parse_enum<FillerKind>(j.at("filler").get<std::string>(), "filler");
        c.couplings.clear();
        for (const auto& s : j.at("couplings")) c.couplings.push_back(parse_enum<CouplingKind>(s.get<std::string>(), "coupling"));
        c.bound = j.at("bound").get<double>();
        c.bins = j.at("bins").get<int>();
        c.group_size = j.at("group_size").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.context_channels = j.at("context_channels").get<int>();
        c.hidden = j.at("hidden").get<int>();
        c.classifier_hidden = j.at("classifier_hidden").get<int>();
        c.voiced_context = j.at("voiced_context").get<bool>();
        c.diff_scale = j.at("diff_scale").get<double>();
        c.f0_divisor = j.at("f0_divisor").get<double>();
        c.energy_diff_gain = j.at("energy_diff_gain").get<double>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
}

}  // namespace pflow
