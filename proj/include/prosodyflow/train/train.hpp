#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosodyflow/dcore/checkpoint.hpp"
#include "prosodyflow/eval/metrics.hpp"
#include "prosodyflow/flows/pipeline.hpp"

namespace pflow {

struct TrainConfig {
    long steps = 5000;
    int batch = 8;             // utterances (BGAP) or windows (AGAP) per step
    double learning_rate = 3e-4;
    std::uint64_t seed = 0;
    double nll_weight = 1.0;
    double bce_weight = 1.0;
    int monitor_window = 500;
    double clip_norm = 10.0;
    int window = 32;           // AGAP training window, in groups
    long checkpoint_every = 500;

    void validate() const {
        if (steps < 1 || batch < 1 || monitor_window < 1 || window < 1) {
            throw ConfigError("steps, batch, monitor_window and window must be positive");
        }
        if (!(learning_rate > 0.0) || !(clip_norm > 0.0)) throw ConfigError("learning rate and clip norm must be positive");
        if (!(nll_weight >= 0.0) || !(bce_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"steps", c.steps},
                          {"batch", c.batch},
                          {"learning_rate", c.learning_rate},
                          {"seed", c.seed},
                          {"nll_weight", c.nll_weight},
                          {"bce_weight", c.bce_weight},
                          {"monitor_window", c.monitor_window},
                          {"clip_norm", c.clip_norm},
                          {"window", c.window},
                          {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "steps") c.steps = v.get<long>();
            else if (key == "batch") c.batch = v.get<int>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "nll_weight") c.nll_weight = v.get<double>();
            else if (key == "bce_weight") c.bce_weight = v.get<double>();
            else if (key == "monitor_window") c.monitor_window = v.get<int>();
            else if (key == "clip_norm") c.clip_norm = v.get<double>();
            else if (key == "window") c.window = v.get<int>();
            else if (key == "checkpoint_every") c.checkpoint_every = v.get<long>();
            else throw ConfigError("unknown train config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
}

// Rolling window over the per-step prior statistic 0.5 * mean(z^2).
class PriorMonitor {
public:
    explicit PriorMonitor(int window = 500) : window_(static_cast<std::size_t>(window)) {}

    void push(double h) {
        values_.push_back(h);
        if (values_.size() > window_) values_.pop_front();
    }
    std::size_t size() const { return values_.size(); }

    double mean() const {
        if (values_.empty()) throw EmptySequenceError("prior monitor has no values");
        double s = 0.0;
        for (double v : values_) s += v;
        return s / static_cast<double>(values_.size());
    }
    // Mean of |h - 0.5| over the window; 0 for a standard-normal latent.
    double mean_deviation() const {
        if (values_.empty()) throw EmptySequenceError("prior monitor has no values");
        double s = 0.0;
        for (double v : values_) s += std::abs(v - 0.5);
        return s / static_cast<double>(values_.size());
    }

private:
    std::size_t window_;
    std::deque<double> values_;
};

struct HistoryRow {
    long step = 0;
    double loss = 0.0;
    double monitor = 0.0;
};

inline constexpr const char* kHistoryHeader = "step,loss,monitor";

inline std::string history_line(const HistoryRow& r) {
    return std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.monitor);
}

inline std::vector<HistoryRow> read_history_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kHistoryHeader) throw FormatError(path + ":1: expected header '" + kHistoryHeader + "'");
    std::vector<HistoryRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        std::stringstream ss(line);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
            throw FormatError(where + ": expected 3 fields");
        }
        rows.push_back({detail::parse_int_strict(a, where), detail::parse_double_strict(b, where),
                        detail::parse_double_strict(c, where)});
    }
    return rows;
}

// Mean of |monitor - 0.5| over the last `last` rows.
inline double final_monitor_deviation(const std::vector<HistoryRow>& rows, std::size_t last) {
    if (rows.empty()) throw EmptySequenceError("empty training history");
    const std::size_t n = std::min(last, rows.size());
    double s = 0.0;
    for (std::size_t i = rows.size() - n; i < rows.size(); ++i) s += std::abs(rows[i].monitor - 0.5);
    return s / static_cast<double>(n);
}

// Corpus of prepared utterances sharing one model configuration.
struct Corpus {
    FlowConfig cfg;
    std::vector<PreparedUtterance> utterances;

    std::size_t size() const { return utterances.size(); }
    std::size_t min_groups() const {
        std::size_t m = std::numeric_limits<std::size_t>::max();
        for (const auto& u : utterances) m = std::min(m, u.groups);
        return m;
    }
};

inline Corpus prepare_corpus(const std::vector<SequenceTrack>& tracks, const std::vector<PhonemeSeq>& seqs,
                             const FlowConfig& cfg, const std::vector<std::string>& ids = {}) {
    if (tracks.size() != seqs.size()) throw ContractError("tracks and phoneme sequences differ in count");
    Corpus c;
    c.cfg = cfg;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        c.utterances.push_back(prepare_utterance(tracks[i], seqs[i], cfg, i < ids.size() ? ids[i] : std::to_string(i)));
    }
    return c;
}

// One minibatch: utterance indices and, for AGAP, the first group of each
// equal-length window.
struct Batch {
    std::vector<std::size_t> items;
    std::vector<std::size_t> starts;
    std::size_t window = 0;
};

struct StepResult {
    double loss = 0.0;
    double nll = 0.0;
    double bce = 0.0;
    double monitor = 0.0;
    double grad_norm = 0.0;
};

// Loss terms of one batch on a fresh tape.
struct BatchLoss {
    Var total;
    Var nll;
    Var bce;
    Mat z;
};

inline BatchLoss batch_loss(Graph& g, FlowModel& model, const Corpus& corpus, const Batch& batch, const TrainConfig& tc) {
    const FlowConfig& cfg = model.cfg;
    std::vector<Var> xs, cs, bces;
    for (std::size_t item : batch.items) {
        const PreparedUtterance& u = corpus.utterances.at(item);
        Var phi = utterance_phi(g, model.params, u.seq);
        xs.push_back(utterance_data(g, model.params, cfg, u));
        cs.push_back(utterance_context(g, model.params, cfg, phi, u.voiced));
        if (tc.bce_weight > 0.0) bces.push_back(classifier_loss(g, model.params, model.classifier(), phi, u.voiced));
    }
    Var x, ctx;
    int rows_per_step = 1;
    if (cfg.kind == ModelKind::agap) {
        // Time-major windows: row t*B + b is group start_b + t of item b.
        const int b_count = static_cast<int>(batch.items.size());
        std::vector<int> idx(batch.window * static_cast<std::size_t>(b_count));
        std::vector<int> offset(static_cast<std::size_t>(b_count));
        int acc = 0;
        for (int b = 0; b < b_count; ++b) {
            offset[static_cast<std::size_t>(b)] = acc;
            acc += static_cast<int>(xs[static_cast<std::size_t>(b)].rows());
        }
        for (std::size_t t = 0; t < batch.window; ++t) {
            for (int b = 0; b < b_count; ++b) {
                idx[t * static_cast<std::size_t>(b_count) + static_cast<std::size_t>(b)] =
                    offset[static_cast<std::size_t>(b)] + static_cast<int>(batch.starts[static_cast<std::size_t>(b)] + t);
            }
        }
        x = op::gather_rows(op::concat_rows(xs), idx);
        ctx = op::gather_rows(op::concat_rows(cs), idx);
        rows_per_step = b_count;
    } else {
        x = op::concat_rows(xs);
        ctx = op::concat_rows(cs);
    }
    const FlowOutput out = model.forward(g, x, ctx, rows_per_step);
    BatchLoss bl;
    bl.nll = flow_nll(out);
    bl.total = op::scale(bl.nll, tc.nll_weight);
    if (!bces.empty()) {
        // Frame-weighted mean over the batch.
        double frames = 0.0;
        for (std::size_t item : batch.items) frames += static_cast<double>(corpus.utterances[item].frames);
        std::vector<Var> parts;
        for (std::size_t i = 0; i < bces.size(); ++i) {
            parts.push_back(op::scale(bces[i], static_cast<double>(corpus.utterances[batch.items[i]].frames) / frames));
        }
        Var bce = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) bce = op::add(bce, parts[i]);
        bl.bce = bce;
        bl.total = op::add(bl.total, op::scale(bce, tc.bce_weight));
    }
    bl.z = out.z.value();
    return bl;
}

// Full training state: everything needed to continue bit-exactly.
class Trainer {
public:
    Trainer(FlowModel model, TrainConfig tc) : model_(std::move(model)), tc_(tc), rng_(batch_seed(tc.seed)) {
        tc_.validate();
        opt_.learning_rate = tc_.learning_rate;
    }

    // Fresh model initialized from the training seed.
    static Trainer create(const FlowConfig& cfg, const TrainConfig& tc) {
        std::mt19937_64 init_rng(tc.seed);
        return Trainer(FlowModel::create(cfg, init_rng), tc);
    }

    FlowModel& model() { return model_; }
    const FlowModel& model() const { return model_; }
    const TrainConfig& config() const { return tc_; }
    long step_count() const { return step_; }
    const OptimizerState& optimizer() const { return opt_; }

    Batch draw_batch(const Corpus& corpus) {
        if (corpus.utterances.empty()) throw ConfigError("training corpus is empty");
        Batch b;
        std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
        for (int i = 0; i < tc_.batch; ++i) b.items.push_back(pick(rng_));
        if (model_.cfg.kind == ModelKind::agap) {
            b.window = std::min(static_cast<std::size_t>(tc_.window), corpus.min_groups());
            for (std::size_t item : b.items) {
                std::uniform_int_distribution<std::size_t> start(0, corpus.utterances[item].groups - b.window);
                b.starts.push_back(start(rng_));
            }
        }
        return b;
    }

    // Forward, backward, clip, Adam update. The monitor and loss describe the
    // parameters before the update. A non-finite loss or gradient throws
    // before any parameter changes.
    StepResult step(const Corpus& corpus, const Batch& batch) {
        const long at = step_ + 1;
        try {
            StepResult r = step_impl(corpus, batch);
            step_ = at;
            return r;
        } catch (const NumericError& e) {
            throw NumericError("training step " + std::to_string(at) + ": " + e.what());
        }
    }

    StepResult step(const Corpus& corpus) { return step(corpus, draw_batch(corpus)); }

    nlohmann::json checkpoint() const {
        nlohmann::json j;
        j["format"] = kCheckpointFormat;
        j["version"] = kCheckpointVersion;
        j["params"] = params_to_json(model_.params);
        j["optimizer"] = optimizer_to_json(opt_);
        std::ostringstream rs;
        rs << rng_;
        j["meta"] = {{"model", config_to_json(model_.cfg)},
                     {"train", train_config_to_json(tc_)},
                     {"step", step_},
                     {"rng", rs.str()}};
        return j;
    }

    // Restores a checkpoint written by checkpoint(). Training settings other
    // than the step budget come from the checkpoint.
    static Trainer from_checkpoint(const nlohmann::json& j) {
        try {
            FlowModel m;
            m.cfg = config_from_json(j.at("meta").at("model"));
            m.params = load_params(j);
            Trainer t(std::move(m), train_config_from_json(j.at("meta").at("train")));
            t.opt_ = optimizer_from_json(j.at("optimizer"));
            t.step_ = j.at("meta").at("step").get<long>();
            std::istringstream rs(j.at("meta").at("rng").get<std::string>());
            rs >> t.rng_;
            if (!rs) throw FormatError("checkpoint rng state is corrupt");
            return t;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed checkpoint: ") + e.what());
        }
    }

    void set_steps(long steps) {
        tc_.steps = steps;
        tc_.validate();
    }

private:
    StepResult step_impl(const Corpus& corpus, const Batch& batch) {
        Graph g;
        model_.params.zero_grad();
        BatchLoss bl = batch_loss(g, model_, corpus, batch, tc_);
        StepResult r;
        r.loss = bl.total.item();
        r.nll = bl.nll.item();
        r.bce = bl.bce.graph ? bl.bce.item() : 0.0;
        r.monitor = prior_monitor(bl.z);
        if (!std::isfinite(r.loss)) throw NumericError("non-finite loss");
        g.backward(bl.total);
        for (const auto& [name, p] : model_.params) {
            if (!all_finite(p.grad)) throw NumericError("non-finite gradient for '" + name + "'");
        }
        r.grad_norm = clip_grad_norm(model_.params, tc_.clip_norm);
        optimizer_step(opt_, model_.params);
        return r;
    }

    static std::uint64_t batch_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

    FlowModel model_;
    TrainConfig tc_;
    OptimizerState opt_;
    std::mt19937_64 rng_;
    long step_ = 0;
};

inline FlowModel model_from_checkpoint(const nlohmann::json& j) {
    FlowModel m;
    try {
        m.cfg = config_from_json(j.at("meta").at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint has no model config: ") + e.what());
    }
    m.params = load_params(j);
    // Every parameter the config implies must be present with the same shape.
    std::mt19937_64 rng(0);
    const FlowModel ref = FlowModel::create(m.cfg, rng);
    for (const auto& [name, p] : ref.params) {
        if (!m.params.contains(name)) throw FormatError("checkpoint lacks parameter '" + name + "'");
        const Mat& v = m.params.at(name).value;
        if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
            throw FormatError("parameter '" + name + "' has shape " + shape_str(v) + ", config implies " + shape_str(p.value));
        }
    }
    if (m.params.size() != ref.params.size()) throw FormatError("checkpoint has parameters the config does not use");
    return m;
}

struct FitOptions {
    std::string out_dir;    // empty: keep everything in memory
    bool resume = false;    // continue from out_dir/checkpoint_last.json
};

struct FitResult {
    std::vector<HistoryRow> history;
    double final_deviation = 0.0;  // mean |monitor - 0.5| over the monitor window
    double best_loss = 0.0;
};

namespace detail {
inline std::string join_path(const std::string& dir, const char* name) {
    return (std::filesystem::path(dir) / name).string();
}
}  // namespace detail

// Trains for tc.steps total steps. With an output directory, writes
// history.csv (one row per step, appended as training runs),
// checkpoint_last.json every checkpoint_every steps and at the end,
// checkpoint_best.json at the lowest windowed loss among checkpoint points,
// and checkpoint_final.json. On a non-finite loss the last-good state is
// saved to checkpoint_last.json and the NumericError is rethrown.
inline FitResult fit(Trainer& trainer, const Corpus& corpus, const FitOptions& fo = {}) {
    if (corpus.utterances.empty()) throw ConfigError("training corpus is empty");
    if (config_to_json(corpus.cfg) != config_to_json(trainer.model().cfg)) {
        throw ConfigError("corpus was prepared for a different model config");
    }
    const TrainConfig& tc = trainer.config();
    FitResult res;
    std::ofstream hist;
    if (!fo.out_dir.empty()) {
        std::filesystem::create_directories(fo.out_dir);
        const std::string hpath = detail::join_path(fo.out_dir, "history.csv");
        if (fo.resume && std::filesystem::exists(hpath)) {
            res.history = read_history_file(hpath);
            // Rows past the checkpoint are replayed identically; drop them.
            while (!res.history.empty() && res.history.back().step > trainer.step_count()) res.history.pop_back();
            std::ofstream rewrite(hpath, std::ios::trunc);
            rewrite << kHistoryHeader << "\n";
            for (const auto& r : res.history) rewrite << history_line(r) << "\n";
        } else {
            std::ofstream(hpath, std::ios::trunc) << kHistoryHeader << "\n";
        }
        hist.open(hpath, std::ios::app);
        if (!hist) throw FormatError("cannot open '" + hpath + "' for appending");
    }
    PriorMonitor monitor(tc.monitor_window);
    PriorMonitor losses(tc.monitor_window);
    for (const auto& r : res.history) {
        monitor.push(r.monitor);
        losses.push(r.loss);
    }
    double best = std::numeric_limits<double>::infinity();
    auto save = [&](const char* name) {
        if (!fo.out_dir.empty()) write_json_file(detail::join_path(fo.out_dir, name), trainer.checkpoint());
    };
    while (trainer.step_count() < tc.steps) {
        StepResult r;
        try {
            r = trainer.step(corpus);
        } catch (const NumericError&) {
            save("checkpoint_last.json");
            throw;
        }
        const HistoryRow row{trainer.step_count(), r.loss, r.monitor};
        res.history.push_back(row);
        monitor.push(r.monitor);
        losses.push(r.loss);
        if (hist.is_open()) hist << history_line(row) << "\n" << std::flush;
        const bool at_checkpoint =
            (tc.checkpoint_every > 0 && trainer.step_count() % tc.checkpoint_every == 0) || trainer.step_count() == tc.steps;
        if (at_checkpoint) {
            save("checkpoint_last.json");
            if (losses.mean() < best) {
                best = losses.mean();
                save("checkpoint_best.json");
            }
        }
    }
    save("checkpoint_final.json");
    res.final_deviation = monitor.size() ? monitor.mean_deviation() : 0.0;
    res.best_loss = best;
    return res;
}

// Posterior statistics of the latent over every element of a corpus.
struct LatentStats {
    double mean = 0.0;
    double variance = 0.0;
    double skewness = 0.0;
    double kurtosis = 0.0;  // excess
    double monitor = 0.0;   // 0.5 * mean(z^2)
    std::size_t count = 0;
};

inline std::vector<double> corpus_latents(const FlowModel& model, const Corpus& corpus) {
    auto& m = const_cast<FlowModel&>(model);  // gradients are disabled
    std::vector<double> z;
    for (const auto& u : corpus.utterances) {
        Graph g(false);
        Var phi = utterance_phi(g, m.params, u.seq);
        Var x = utterance_data(g, m.params, m.cfg, u);
        Var ctx = utterance_context(g, m.params, m.cfg, phi, u.voiced);
        const Mat zu = m.forward(g, x, ctx, 1).z.value();
        z.insert(z.end(), zu.data(), zu.data() + zu.size());
    }
    return z;
}

inline LatentStats latent_stats(const std::vector<double>& z) {
    const Moments mo = moments(z);
    LatentStats s;
    s.mean = mo.mu1;
    s.variance = mo.mu2 * mo.mu2;
    s.skewness = mo.mu3;
    s.kurtosis = mo.mu4;
    s.count = mo.count;
    double sq = 0.0;
    for (double v : z) sq += v * v;
    s.monitor = 0.5 * sq / static_cast<double>(z.size());
    return s;
}

inline LatentStats monitor_eval(const FlowModel& model, const Corpus& corpus) {
    if (corpus.utterances.empty()) throw EmptySequenceError("monitor_eval over an empty corpus");
    return latent_stats(corpus_latents(model, corpus));
}

}  // namespace pflow
