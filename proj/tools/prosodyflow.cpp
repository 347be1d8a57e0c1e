// prosodyflow: corpus generation, preprocessing inspection, training,
// sampling, evaluation and self-checks.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "prosodyflow/eval/report.hpp"
#include "prosodyflow/synthgen/synthgen.hpp"
#include "prosodyflow/toolkit/checks.hpp"
#include "prosodyflow/train/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pflow;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2 };

// Raised for usage problems that CLI11 cannot see (bad combinations, files).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read '" + path + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 15];
    while (in) {
        in.read(buf, sizeof(buf));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char h[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(h, sizeof(h), "%02x", md[i]);
        hex += h;
    }
    return hex;
}

json digest_list(const std::vector<std::string>& paths, const std::string& base = {}) {
    json out = json::array();
    for (const auto& p : paths) {
        const std::string full = base.empty() ? p : (fs::path(base) / p).string();
        out.push_back({{"path", p}, {"sha256", sha256_file(full)}});
    }
    return out;
}

// manifest.json in out_dir. Artifact paths are relative to out_dir. No
// timestamps, so reruns with equal inputs give identical manifests.
void write_manifest(const std::string& out_dir, const std::string& command, const json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs, std::vector<std::string> artifacts) {
    std::sort(artifacts.begin(), artifacts.end());
    json m{{"tool", "prosodyflow"},
           {"version", kToolVersion},
           {"command", command},
           {"config", config},
           {"seed", seed},
           {"inputs", digest_list(inputs)},
           {"artifacts", digest_list(artifacts, out_dir)}};
    write_json_file((fs::path(out_dir) / "manifest.json").string(), m);
}

std::vector<std::string> corpus_files(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& id : list_track_ids(dir)) {
        files.push_back(track_path(dir, id));
        files.push_back(phoneme_path(dir, id));
    }
    return files;
}

std::vector<Utterance> load_corpus(const std::string& dir) {
    if (!fs::is_directory(dir)) throw UsageError("corpus directory '" + dir + "' does not exist");
    return read_corpus(dir);
}

std::string relative_to(const std::string& path, const std::string& dir) {
    return fs::path(path).lexically_relative(dir).string();
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
    SynthConfig cfg;
    std::string out;
    bool force = false;
};

bool is_corpus_artifact(const std::string& name) {
    auto ends = [&](const std::string& s) {
        return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return ends(".track.csv") || ends(".phonemes.json") || name == "manifest.json";
}

int cmd_gen(const GenArgs& a) {
    a.cfg.validate();
    if (fs::exists(a.out)) {
        if (!fs::is_directory(a.out)) throw UsageError("'" + a.out + "' exists and is not a directory");
        if (!fs::is_empty(a.out)) {
            if (!a.force) throw UsageError("'" + a.out + "' is not empty; pass --force to overwrite");
            for (const auto& e : fs::directory_iterator(a.out)) {
                if (e.is_regular_file() && is_corpus_artifact(e.path().filename().string())) fs::remove(e.path());
            }
        }
    }
    const auto corpus = gen_corpus(a.cfg);
    std::vector<std::string> rel;
    for (const auto& f : write_corpus(a.out, corpus)) rel.push_back(relative_to(f, a.out));
    write_manifest(a.out, "gen", synth_config_to_json(a.cfg), a.cfg.seed, {}, rel);
    std::cerr << "wrote " << corpus.size() << " utterances to " << a.out << "\n";
    return kOk;
}

// ---- model flags shared by prep and train ------------------------------------

struct ModelArgs {
    std::string model = "bgap";
    std::string feature = "f0";
    std::string aux = "diff";
    std::string filler;  // default depends on the model
    std::string coupling = "hybrid";
    bool no_voiced_context = false;
    int hidden = 32;
    int context_channels = 8;
    int vocab = 32;
};

void add_model_flags(CLI::App* sub, ModelArgs& m) {
    sub->add_option("--model", m.model, "bgap|agap")->check(CLI::IsMember({"bgap", "agap"}));
    sub->add_option("--feature", m.feature, "f0|energy")->check(CLI::IsMember({"f0", "energy"}));
    sub->add_option("--aux", m.aux, "diff|cwt")->check(CLI::IsMember({"diff", "cwt"}));
    sub->add_option("--filler", m.filler, "dtx|bias|interp (default: dtx for bgap, bias for agap)")
        ->check(CLI::IsMember({"dtx", "bias", "interp"}));
    sub->add_option("--coupling", m.coupling, "affine|spline|hybrid")->check(CLI::IsMember({"affine", "spline", "hybrid"}));
    sub->add_flag("--no-voiced-context", m.no_voiced_context, "condition on the plain text matrix");
    sub->add_option("--hidden", m.hidden, "predictor width");
    sub->add_option("--context-channels", m.context_channels, "embedding channels");
    sub->add_option("--vocab", m.vocab, "phoneme vocabulary size");
}

FlowConfig build_model_config(const ModelArgs& m) {
    const ModelKind kind = parse_enum<ModelKind>(m.model, "model");
    FlowConfig cfg = FlowConfig::preset(kind, parse_enum<FeatureKind>(m.feature, "feature"),
                                        parse_enum<AuxKind>(m.aux, "aux"), m.coupling);
    if (!m.filler.empty()) cfg.filler = parse_enum<FillerKind>(m.filler, "filler");
    cfg.voiced_context = !m.no_voiced_context;
    cfg.hidden = m.hidden;
    cfg.context_channels = m.context_channels;
    cfg.vocab_size = m.vocab;
    cfg.validate();
    if (cfg.kind == ModelKind::agap && cfg.filler == FillerKind::dtx) {
        std::cerr << "warning: the distance-transform filler with the autoregressive model tends to give unnatural "
                     "f0 contours; the learned bias filler is the usual choice\n";
    }
    return cfg;
}

Corpus corpus_for(const std::vector<Utterance>& utts, const FlowConfig& cfg) {
    std::vector<SequenceTrack> tracks;
    std::vector<PhonemeSeq> seqs;
    std::vector<std::string> ids;
    for (const auto& u : utts) {
        tracks.push_back(u.track);
        seqs.push_back(u.phonemes);
        ids.push_back(u.id);
    }
    return prepare_corpus(tracks, seqs, cfg, ids);
}

// ---- prep ------------------------------------------------------------------

struct PrepArgs {
    ModelArgs model;
    std::string corpus, out, checkpoint;
    std::uint64_t seed = 0;
};

void write_matrix_csv(const std::string& path, const Mat& m, const std::string& first_col) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << first_col;
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ",c" << c;
    out << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out << r;
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << format_double(m(r, c));
        out << "\n";
    }
}

// Writes the grouped model input of every utterance. Models with a learned
// filler need parameters: taken from --checkpoint, else a fresh init.
int cmd_prep(const PrepArgs& a) {
    const auto utts = load_corpus(a.corpus);
    FlowModel model;
    if (!a.checkpoint.empty()) {
        model = model_from_checkpoint(read_json_file(a.checkpoint));
    } else {
        std::mt19937_64 rng(a.seed);
        model = FlowModel::create(build_model_config(a.model), rng);
    }
    const Corpus corpus = corpus_for(utts, model.cfg);
    fs::create_directories(a.out);
    std::vector<std::string> artifacts;
    json summary = json::array();
    for (const auto& u : corpus.utterances) {
        Graph g(false);
        const Mat x = utterance_data(g, model.params, model.cfg, u).value();
        const std::string name = u.id + ".input.csv";
        write_matrix_csv((fs::path(a.out) / name).string(), x, "group");
        artifacts.push_back(name);
        std::size_t voiced = 0;
        for (int v : u.voiced) voiced += v;
        summary.push_back({{"id", u.id},
                           {"frames", u.frames},
                           {"groups", u.groups},
                           {"voiced_frames", voiced},
                           {"min", x.minCoeff()},
                           {"max", x.maxCoeff()}});
    }
    write_json_file((fs::path(a.out) / "summary.json").string(), json{{"model", config_to_json(model.cfg)}, {"utterances", summary}});
    artifacts.push_back("summary.json");
    std::vector<std::string> inputs = corpus_files(a.corpus);
    if (!a.checkpoint.empty()) inputs.push_back(a.checkpoint);
    write_manifest(a.out, "prep", json{{"model", config_to_json(model.cfg)}}, a.seed, inputs, artifacts);
    std::cerr << "wrote model inputs for " << corpus.size() << " utterances to " << a.out << "\n";
    return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    ModelArgs model;
    TrainConfig tc;
    std::string corpus, out;
    bool resume = false;
};

int cmd_train(const TrainArgs& a) {
    const auto utts = load_corpus(a.corpus);
    const std::string last = (fs::path(a.out) / "checkpoint_last.json").string();
    Trainer trainer = [&] {
        if (!a.resume) return Trainer::create(build_model_config(a.model), a.tc);
        if (!fs::exists(last)) throw UsageError("--resume: no checkpoint at '" + last + "'");
        Trainer t = Trainer::from_checkpoint(read_json_file(last));
        t.set_steps(a.tc.steps);
        std::cerr << "resuming from step " << t.step_count() << "\n";
        return t;
    }();
    const Corpus corpus = corpus_for(utts, trainer.model().cfg);
    const FitResult res = fit(trainer, corpus, FitOptions{a.out, a.resume});
    const LatentStats ls = monitor_eval(trainer.model(), corpus);
    json summary{{"steps", trainer.step_count()},
                 {"final_deviation", res.final_deviation},
                 {"best_loss", res.best_loss},
                 {"final_loss", res.history.empty() ? 0.0 : res.history.back().loss},
                 {"latent",
                  {{"mean", ls.mean},
                   {"variance", ls.variance},
                   {"skewness", ls.skewness},
                   {"kurtosis", ls.kurtosis},
                   {"monitor", ls.monitor},
                   {"count", ls.count}}}};
    write_json_file((fs::path(a.out) / "summary.json").string(), summary);
    const json config{{"model", config_to_json(trainer.model().cfg)}, {"train", train_config_to_json(trainer.config())}};
    write_manifest(a.out, "train", config, trainer.config().seed, corpus_files(a.corpus),
                   {"history.csv", "checkpoint_last.json", "checkpoint_best.json", "checkpoint_final.json", "summary.json"});
    std::cout << "steps " << trainer.step_count() << " final_deviation " << res.final_deviation << " final_loss "
              << summary["final_loss"].get<double>() << "\n";
    return kOk;
}

// ---- sample ----------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint, corpus, out, voicing = "predicted";
    SamplingConfig sc;
    int limit = 0;
};

int cmd_sample(const SampleArgs& a) {
    if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint '" + a.checkpoint + "' does not exist");
    const FlowModel model = model_from_checkpoint(read_json_file(a.checkpoint));
    a.sc.validate();
    auto utts = load_corpus(a.corpus);
    if (a.limit > 0 && static_cast<std::size_t>(a.limit) < utts.size()) utts.resize(static_cast<std::size_t>(a.limit));
    fs::create_directories(a.out);
    std::vector<std::string> artifacts;
    std::vector<std::string> inputs{a.checkpoint};
    for (std::size_t i = 0; i < utts.size(); ++i) {
        const Utterance& u = utts[i];
        inputs.push_back(track_path(a.corpus, u.id));
        inputs.push_back(phoneme_path(a.corpus, u.id));
        const std::vector<int> voiced = a.voicing == "reference" ? u.track.voiced : model.predict_voicing(u.phonemes);
        // One stream per utterance so subsets sample identically.
        std::seed_seq ss{static_cast<std::uint32_t>(a.sc.seed), static_cast<std::uint32_t>(a.sc.seed >> 32),
                         static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(ss);
        const auto frames = sample_frames(model, u.phonemes, voiced, a.sc, rng);
        for (std::size_t s = 0; s < frames.size(); ++s) {
            const std::string name = sample_file_name(u.id, static_cast<int>(s));
            write_track_file((fs::path(a.out) / name).string(), frames_to_track(model.cfg, frames[s], voiced, u.track.frame_rate));
            artifacts.push_back(name);
        }
    }
    const json config{{"model", config_to_json(model.cfg)},
                      {"sigma", a.sc.sigma},
                      {"num_samples", a.sc.num_samples},
                      {"voicing", a.voicing},
                      {"limit", a.limit}};
    write_manifest(a.out, "sample", config, a.sc.seed, inputs, artifacts);
    std::cerr << "wrote " << artifacts.size() << " sampled tracks to " << a.out << "\n";
    return kOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string ref, samples, out, feature = "f0";
};

int cmd_eval(const EvalArgs& a) {
    if (!fs::is_directory(a.ref)) throw UsageError("reference directory '" + a.ref + "' does not exist");
    if (!fs::is_directory(a.samples)) throw UsageError("sample directory '" + a.samples + "' does not exist");
    auto refs = read_track_dir(a.ref);
    const auto samples = read_track_dir(a.samples);
    const IdMismatch mm = match_ids(refs, samples);
    if (!mm.empty()) {
        for (const auto& id : mm.missing_samples) std::cerr << "unmatched: reference '" << id << "' has no samples\n";
        for (const auto& id : mm.missing_reference) std::cerr << "unmatched: samples of '" << id << "' have no reference\n";
        throw UsageError("reference and sample ids do not match");
    }
    const EvalReport rep = evaluate(refs, samples, a.feature == "energy");
    fs::create_directories(a.out);
    write_json_file((fs::path(a.out) / "report.json").string(), report_to_json(rep));
    write_metrics_csv((fs::path(a.out) / "metrics.csv").string(), rep);
    std::vector<std::string> artifacts{"report.json", "metrics.csv"};
    if (!rep.energy) {
        write_moments_csv((fs::path(a.out) / "moments.csv").string(), rep);
        artifacts.push_back("moments.csv");
    }
    std::vector<std::string> inputs;
    for (const auto& e : fs::directory_iterator(a.ref)) {
        if (e.path().filename().string().ends_with(".track.csv")) inputs.push_back(e.path().string());
    }
    for (const auto& e : fs::directory_iterator(a.samples)) {
        if (e.path().filename().string().ends_with(".track.csv")) inputs.push_back(e.path().string());
    }
    std::sort(inputs.begin(), inputs.end());
    write_manifest(a.out, "eval", json{{"feature", a.feature}}, 0, inputs, artifacts);
    for (const auto& [name, m] : rep.metrics) std::cout << name << " " << m.mean << "\n";
    return kOk;
}

// ---- check -----------------------------------------------------------------

struct CheckArgs {
    CheckOptions opts;
    std::string suite = "all", inject, out;
};

int cmd_check(const CheckArgs& a) {
    CheckOptions o = a.opts;
    if (a.inject == "spline-logdet-sign") o.flip_spline_logdet = true;
    std::vector<CheckResult> all;
    auto run = [&](const std::string& name, auto fn) {
        if (a.suite != "all" && a.suite != name) return;
        for (auto& r : fn(o)) {
            std::cerr << (r.passed ? "ok   " : "FAIL ") << r.suite << "/" << r.name << " " << r.metric << "=" << r.value
                      << " tol " << r.tolerance << "\n";
            all.push_back(std::move(r));
        }
    };
    run("invertibility", run_invertibility_checks);
    run("logdet", run_logdet_checks);
    run("gradient", run_gradient_checks);
    json report = checks_to_json(all);
    report["inject"] = a.inject.empty() ? json(nullptr) : json(a.inject);
    std::cout << report.dump(2) << "\n";
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        // Timings vary run to run; the file copy keeps only the verdicts.
        json stable = report;
        for (auto& c : stable["checks"]) c.erase("seconds");
        write_json_file((fs::path(a.out) / "report.json").string(), stable);
        const json config{{"suite", a.suite},
                          {"inputs", o.inputs},
                          {"parameterizations", o.parameterizations},
                          {"gradient_models", o.gradient_models},
                          {"inject", report["inject"]}};
        write_manifest(a.out, "check", config, o.seed, {}, {"report.json"});
    }
    const bool ok = std::all_of(all.begin(), all.end(), [](const CheckResult& r) { return r.passed; });
    return ok ? kOk : kVerifyFailed;
}

// ---- --config support --------------------------------------------------------

// Turns the JSON object named by --config into extra command-line tokens.
// They are appended after the user's flags and options take their last
// value, so the file overrides flags given on the command line.
std::vector<std::string> config_tokens(const std::vector<std::string>& args, CLI::App* sub) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return {};
    json j;
    try {
        j = read_json_file(path);
    } catch (const Error& e) {
        throw UsageError(std::string("--config: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("--config: '" + path + "' must hold a JSON object");
    std::vector<std::string> out;
    for (const auto& [key, v] : j.items()) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt || key == "config") throw UsageError("--config: unknown option '" + key + "' for " + sub->get_name());
        if (v.is_boolean()) {
            if (opt->get_expected_min() != 0) throw UsageError("--config: '" + key + "' is not a flag");
            if (v.get<bool>()) out.push_back("--" + key);
            continue;
        }
        out.push_back("--" + key);
        if (v.is_string()) out.push_back(v.get<std::string>());
        else if (v.is_number_integer() || v.is_number_unsigned()) out.push_back(v.dump());
        else if (v.is_number_float()) out.push_back(format_double(v.get<double>()));
        else throw UsageError("--config: value of '" + key + "' must be a string, number or boolean");
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Normalizing-flow models of f0 and energy contours"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config_path;

    GenArgs gen;
    auto* s_gen = app.add_subcommand("gen", "generate a synthetic corpus");
    s_gen->add_option("--seed", gen.cfg.seed, "generator seed")->required();
    s_gen->add_option("--utterances", gen.cfg.utterances, "number of utterances");
    s_gen->add_option("--min-frames", gen.cfg.min_frames, "shortest utterance");
    s_gen->add_option("--max-frames", gen.cfg.max_frames, "longest utterance");
    s_gen->add_option("--voiced-run", gen.cfg.mean_voiced_run, "mean voiced run length (frames)");
    s_gen->add_option("--unvoiced-run", gen.cfg.mean_unvoiced_run, "mean unvoiced run length (frames)");
    s_gen->add_option("--vocab", gen.cfg.vocab_size, "phoneme vocabulary size");
    s_gen->add_option("--out", gen.out, "output directory")->required();
    s_gen->add_flag("--force", gen.force, "overwrite an existing corpus");

    PrepArgs prep;
    auto* s_prep = app.add_subcommand("prep", "write the model input of every utterance for inspection");
    add_model_flags(s_prep, prep.model);
    s_prep->add_option("--corpus", prep.corpus, "corpus directory")->required();
    s_prep->add_option("--out", prep.out, "output directory")->required();
    s_prep->add_option("--checkpoint", prep.checkpoint, "take the model from a checkpoint");
    s_prep->add_option("--seed", prep.seed, "init seed when no checkpoint is given");

    TrainArgs train;
    auto* s_train = app.add_subcommand("train", "fit a flow model");
    add_model_flags(s_train, train.model);
    s_train->add_option("--corpus", train.corpus, "corpus directory")->required();
    s_train->add_option("--out", train.out, "run directory")->required();
    s_train->add_option("--steps", train.tc.steps, "total optimizer steps");
    s_train->add_option("--batch", train.tc.batch, "utterances (bgap) or windows (agap) per step");
    s_train->add_option("--lr", train.tc.learning_rate, "learning rate");
    s_train->add_option("--seed", train.tc.seed, "init and batch seed");
    s_train->add_option("--window", train.tc.window, "agap training window in groups");
    s_train->add_option("--monitor-window", train.tc.monitor_window, "steps averaged by the prior monitor");
    s_train->add_option("--checkpoint-every", train.tc.checkpoint_every, "steps between checkpoints (0: end only)");
    s_train->add_option("--nll-weight", train.tc.nll_weight, "weight of the flow likelihood loss");
    s_train->add_option("--bce-weight", train.tc.bce_weight, "weight of the voicing classifier loss");
    s_train->add_flag("--resume", train.resume, "continue from <out>/checkpoint_last.json");

    SampleArgs sample;
    auto* s_sample = app.add_subcommand("sample", "draw sampled tracks from a checkpoint");
    s_sample->add_option("--checkpoint", sample.checkpoint, "checkpoint file")->required();
    s_sample->add_option("--corpus", sample.corpus, "corpus providing phonemes")->required();
    s_sample->add_option("--out", sample.out, "output directory")->required();
    s_sample->add_option("--sigma", sample.sc.sigma, "latent standard deviation");
    s_sample->add_option("--num-samples", sample.sc.num_samples, "samples per utterance");
    s_sample->add_option("--seed", sample.sc.seed, "sampling seed");
    s_sample->add_option("--voicing", sample.voicing, "predicted|reference")->check(CLI::IsMember({"predicted", "reference"}));
    s_sample->add_option("--limit", sample.limit, "use only the first N utterances");

    EvalArgs ev;
    auto* s_eval = app.add_subcommand("eval", "score sampled tracks against references");
    s_eval->add_option("--ref", ev.ref, "reference track directory")->required();
    s_eval->add_option("--samples", ev.samples, "sampled track directory")->required();
    s_eval->add_option("--out", ev.out, "report directory")->required();
    s_eval->add_option("--feature", ev.feature, "f0|energy")->check(CLI::IsMember({"f0", "energy"}));

    CheckArgs chk;
    auto* s_check = app.add_subcommand("check", "run the invertibility, log-det and gradient suites");
    s_check->add_option("--seed", chk.opts.seed, "check seed");
    s_check->add_option("--inputs", chk.opts.inputs, "random inputs per round-trip check");
    s_check->add_option("--parameterizations", chk.opts.parameterizations, "parameter sets per log-det check");
    s_check->add_option("--gradient-models", chk.opts.gradient_models, "random models per gradient check");
    s_check->add_option("--suite", chk.suite, "all|invertibility|logdet|gradient")
        ->check(CLI::IsMember({"all", "invertibility", "logdet", "gradient"}));
    s_check->add_option("--inject", chk.inject, "fault injection")->check(CLI::IsMember({"spline-logdet-sign"}));
    s_check->add_option("--out", chk.out, "also write report.json and a manifest here");

    for (auto* sub : {s_gen, s_prep, s_train, s_sample, s_eval, s_check}) {
        sub->add_option("--config", config_path, "JSON object of option values; overrides flags");
    }

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        if (!args.empty()) {
            if (CLI::App* sub = app.get_subcommand_no_throw(args.front())) {
                for (auto& t : config_tokens(args, sub)) args.push_back(std::move(t));
            }
        }
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (*s_gen) return cmd_gen(gen);
        if (*s_prep) return cmd_prep(prep);
        if (*s_train) return cmd_train(train);
        if (*s_sample) return cmd_sample(sample);
        if (*s_eval) return cmd_eval(ev);
        if (*s_check) return cmd_check(chk);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
