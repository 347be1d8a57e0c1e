#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "prosodyflow/dcore/optim.hpp"

namespace pflow {

// Checkpoint layout (JSON):
//   {"format": "prosodyflow-checkpoint", "version": 1,
//    "params": {name: {"shape": [rows, cols], "values": [row-major...]}},
//    "optimizer": {...}, "meta": {...}}
// Doubles are written in shortest round-trip form, so a save/load cycle is
// bit-exact.
inline constexpr const char* kCheckpointFormat = "prosodyflow-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json j;
    j["shape"] = {m.rows(), m.cols()};
    std::vector<double> values(m.data(), m.data() + m.size());
    j["values"] = std::move(values);
    return j;
}

inline Mat mat_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.contains("shape") || !j.contains("values")) throw FormatError(what + ": missing shape/values");
    const auto shape = j.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw FormatError(what + ": shape must be [rows, cols]");
    const auto values = j.at("values").get<std::vector<double>>();
    if (static_cast<long>(values.size()) != shape[0] * shape[1]) {
        throw FormatError(what + ": product(shape) != number of values");
    }
    Mat m(shape[0], shape[1]);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

inline nlohmann::json params_to_json(const ParameterStore& store) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, p] : store) j[name] = mat_to_json(p.value);
    return j;
}

inline ParameterStore params_from_json(const nlohmann::json& j) {
    ParameterStore store;
    for (auto it = j.begin(); it != j.end(); ++it) store.add(it.key(), mat_from_json(it.value(), it.key()));
    return store;
}

inline nlohmann::json optimizer_to_json(const OptimizerState& st) {
    nlohmann::json j;
    j["learning_rate"] = st.learning_rate;
    j["beta1"] = st.beta1;
    j["beta2"] = st.beta2;
    j["eps"] = st.eps;
    j["step"] = st.step;
    nlohmann::json mom = nlohmann::json::object();
    for (const auto& [name, mo] : st.moments) mom[name] = {{"m", mat_to_json(mo.m)}, {"v", mat_to_json(mo.v)}};
    j["moments"] = std::move(mom);
    return j;
}

inline OptimizerState optimizer_from_json(const nlohmann::json& j) {
    OptimizerState st;
    st.learning_rate = j.at("learning_rate").get<double>();
    st.beta1 = j.at("beta1").get<double>();
    st.beta2 = j.at("beta2").get<double>();
    st.eps = j.at("eps").get<double>();
    st.step = j.at("step").get<long>();
    for (auto it = j.at("moments").begin(); it != j.at("moments").end(); ++it) {
        st.moments[it.key()] = AdamMoments{mat_from_json(it.value().at("m"), it.key() + ".m"),
                                           mat_from_json(it.value().at("v"), it.key() + ".v")};
    }
    return st;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << j.dump(1) << "\n";
    if (!out) throw FormatError("write failed for '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

inline void save_params(const std::string& path, const ParameterStore& store, const nlohmann::json& meta = {}) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["params"] = params_to_json(store);
    if (!meta.is_null()) j["meta"] = meta;
    write_json_file(path, j);
}

inline ParameterStore load_params(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kCheckpointFormat) throw FormatError("not a prosodyflow checkpoint");
    if (j.value("version", 0) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    return params_from_json(j.at("params"));
}

}  // namespace pflow
