#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "prosodyflow/synthgen/synthgen.hpp"
#include "prosodyflow/train/train.hpp"

using namespace pflow;

namespace {

Corpus small_corpus(const FlowConfig& cfg, int utterances = 6, std::uint64_t seed = 1) {
    SynthConfig sc;
    sc.utterances = utterances;
    sc.min_frames = 40;
    sc.max_frames = 60;
    sc.seed = seed;
    std::vector<SequenceTrack> tracks;
    std::vector<PhonemeSeq> seqs;
    for (const auto& u : gen_corpus(sc)) {
        tracks.push_back(u.track);
        seqs.push_back(u.phonemes);
    }
    return prepare_corpus(tracks, seqs, cfg);
}

FlowConfig small_config(ModelKind kind, const std::string& mode = "hybrid") {
    FlowConfig cfg = FlowConfig::preset(kind, FeatureKind::f0, AuxKind::diff, mode);
    cfg.hidden = 8;
    return cfg;
}

TrainConfig small_train(long steps, std::uint64_t seed = 5) {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch = 2;
    tc.seed = seed;
    tc.window = 12;
    tc.monitor_window = 10;
    tc.checkpoint_every = 5;
    return tc;
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    return d;
}

}  // namespace

TEST(Monitor, StandardNormalAndZero) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat z(200, 50);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
    const double h = prior_monitor(z);
    EXPECT_GE(h, 0.48);
    EXPECT_LE(h, 0.52);
    EXPECT_EQ(prior_monitor(Mat::Zero(10, 4)), 0.0);
}

TEST(Monitor, RollingWindow) {
    PriorMonitor m(3);
    for (double v : {10.0, 0.5, 0.7, 0.3}) m.push(v);
    EXPECT_EQ(m.size(), 3u);
    EXPECT_NEAR(m.mean(), 0.5, 1e-15);
    EXPECT_NEAR(m.mean_deviation(), 0.4 / 3.0, 1e-15);
}

TEST(TrainStep, SmallStepDescends) {
    for (ModelKind kind : {ModelKind::bgap, ModelKind::agap}) {
        const FlowConfig cfg = small_config(kind);
        const Corpus corpus = small_corpus(cfg);
        TrainConfig tc = small_train(1);
        tc.learning_rate = 1e-4;
        Trainer t = Trainer::create(cfg, tc);
        const Batch b = t.draw_batch(corpus);
        const double before = t.step(corpus, b).loss;
        Graph g;
        const double after = batch_loss(g, t.model(), corpus, b, tc).total.item();
        EXPECT_LT(after, before) << to_string(kind);
    }
}

TEST(TrainStep, MonitorDescribesPreUpdateLatent) {
    const FlowConfig cfg = small_config(ModelKind::bgap);
    const Corpus corpus = small_corpus(cfg);
    Trainer t = Trainer::create(cfg, small_train(1));
    const Batch b = t.draw_batch(corpus);
    Graph g;
    const Mat z = batch_loss(g, t.model(), corpus, b, t.config()).z;
    EXPECT_EQ(t.step(corpus, b).monitor, prior_monitor(z));
}

TEST(Fit, SameSeedReplaysBitIdentically) {
    for (ModelKind kind : {ModelKind::bgap, ModelKind::agap}) {
        const FlowConfig cfg = small_config(kind);
        const Corpus corpus = small_corpus(cfg);
        Trainer a = Trainer::create(cfg, small_train(12));
        Trainer b = Trainer::create(cfg, small_train(12));
        const auto ha = fit(a, corpus).history;
        const auto hb = fit(b, corpus).history;
        ASSERT_EQ(ha.size(), 12u);
        for (std::size_t i = 0; i < ha.size(); ++i) {
            EXPECT_EQ(ha[i].loss, hb[i].loss);
            EXPECT_EQ(ha[i].monitor, hb[i].monitor);
        }
        Trainer c = Trainer::create(cfg, small_train(12, 6));
        EXPECT_NE(fit(c, corpus).history.back().loss, ha.back().loss);
    }
}

TEST(Fit, ResumeContinuesTheSameTrajectory) {
    for (ModelKind kind : {ModelKind::bgap, ModelKind::agap}) {
        const FlowConfig cfg = small_config(kind);
        const Corpus corpus = small_corpus(cfg);
        const auto dir = fresh_dir("pflow_resume_" + to_string(kind));
        Trainer straight = Trainer::create(cfg, small_train(24));
        const auto full = fit(straight, corpus).history;

        Trainer first = Trainer::create(cfg, small_train(10));
        fit(first, corpus, {dir.string(), false});
        Trainer resumed = Trainer::from_checkpoint(read_json_file((dir / "checkpoint_final.json").string()));
        EXPECT_EQ(resumed.step_count(), 10);
        resumed.set_steps(24);
        fit(resumed, corpus, {dir.string(), true});

        const auto hist = read_history_file((dir / "history.csv").string());
        ASSERT_EQ(hist.size(), full.size());
        for (std::size_t i = 0; i < hist.size(); ++i) {
            EXPECT_EQ(hist[i].step, full[i].step);
            EXPECT_EQ(hist[i].loss, full[i].loss) << "step " << hist[i].step;
            EXPECT_EQ(hist[i].monitor, full[i].monitor);
        }
        for (const auto& [name, p] : straight.model().params) {
            EXPECT_EQ(p.value, resumed.model().params.at(name).value) << name;
        }
        std::filesystem::remove_all(dir);
    }
}

TEST(Fit, WritesHistoryAndCheckpoints) {
    const FlowConfig cfg = small_config(ModelKind::bgap);
    const Corpus corpus = small_corpus(cfg);
    const auto dir = fresh_dir("pflow_fit_outputs");
    Trainer t = Trainer::create(cfg, small_train(7));
    const FitResult r = fit(t, corpus, {dir.string(), false});
    for (const char* f : {"history.csv", "checkpoint_last.json", "checkpoint_best.json", "checkpoint_final.json"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    const auto hist = read_history_file((dir / "history.csv").string());
    ASSERT_EQ(hist.size(), 7u);
    for (std::size_t i = 0; i < hist.size(); ++i) {
        EXPECT_EQ(hist[i].step, static_cast<long>(i + 1));
        EXPECT_EQ(hist[i].loss, r.history[i].loss);
    }
    const FlowModel m = model_from_checkpoint(read_json_file((dir / "checkpoint_final.json").string()));
    for (const auto& [name, p] : t.model().params) EXPECT_EQ(p.value, m.params.at(name).value) << name;
    std::filesystem::remove_all(dir);
}

TEST(Fit, NonFiniteLossAbortsAndKeepsLastGood) {
    const FlowConfig cfg = small_config(ModelKind::bgap);
    const Corpus corpus = small_corpus(cfg);
    const auto dir = fresh_dir("pflow_nan_abort");
    Trainer t = Trainer::create(cfg, small_train(20));
    fit(t, corpus, {dir.string(), false});
    Trainer broken = Trainer::from_checkpoint(read_json_file((dir / "checkpoint_final.json").string()));
    broken.set_steps(30);
    Corpus poisoned = corpus;
    for (auto& u : poisoned.utterances) u.features(3, 0) = std::nan("");
    try {
        fit(broken, poisoned, {dir.string(), true});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("training step 21"), std::string::npos) << e.what();
    }
    const Trainer kept = Trainer::from_checkpoint(read_json_file((dir / "checkpoint_last.json").string()));
    EXPECT_EQ(kept.step_count(), 20);
    for (const auto& [name, p] : t.model().params) EXPECT_EQ(p.value, kept.model().params.at(name).value) << name;
    EXPECT_EQ(read_history_file((dir / "history.csv").string()).size(), 20u);
    std::filesystem::remove_all(dir);
}

TEST(Fit, Errors) {
    const FlowConfig cfg = small_config(ModelKind::bgap);
    Corpus empty;
    empty.cfg = cfg;
    Trainer t = Trainer::create(cfg, small_train(3));
    EXPECT_THROW(fit(t, empty), ConfigError);
    const Corpus other = small_corpus(small_config(ModelKind::bgap, "affine"));
    EXPECT_THROW(fit(t, other), ConfigError);
    TrainConfig bad = small_train(3);
    bad.learning_rate = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"stpes", 3}}), ConfigError);
}

TEST(Fit, NllFallsOverEarlyTraining) {
    // Averaged over seeds: the mean NLL of the last 20 of 100 steps is below
    // the first 20.
    double first = 0, last = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const FlowConfig cfg = small_config(ModelKind::bgap);
        const Corpus corpus = small_corpus(cfg, 6, seed + 20);
        TrainConfig tc = small_train(100, seed);
        tc.learning_rate = 1e-3;
        Trainer t = Trainer::create(cfg, tc);
        const auto h = fit(t, corpus).history;
        for (int i = 0; i < 20; ++i) {
            first += h[static_cast<std::size_t>(i)].loss;
            last += h[h.size() - 1 - static_cast<std::size_t>(i)].loss;
        }
    }
    EXPECT_LT(last, first);
}

TEST(MonitorEval, IdentityFlowReportsDataStatistics) {
    FlowConfig cfg = small_config(ModelKind::agap);
    cfg.filler = FillerKind::dtx;
    const Corpus corpus = small_corpus(cfg);
    std::mt19937_64 rng(2);
    const FlowModel m = FlowModel::create(cfg, rng);  // zero heads: identity couplings
    std::vector<double> data;
    for (const auto& u : corpus.utterances) {
        const Mat x = group(u.features, cfg.group_size).values;
        data.insert(data.end(), x.data(), x.data() + x.size());
    }
    const LatentStats s = monitor_eval(m, corpus);
    const Moments o = moments(data);
    EXPECT_NEAR(s.mean, o.mu1, 1e-10);
    EXPECT_NEAR(s.variance, o.mu2 * o.mu2, 1e-10);
    EXPECT_NEAR(s.skewness, o.mu3, 1e-10);
    EXPECT_NEAR(s.kurtosis, o.mu4, 1e-10);
    EXPECT_EQ(s.count, data.size());
}

TEST(MonitorEval, MatchesDirectMomentOracle) {
    const FlowConfig cfg = small_config(ModelKind::bgap);
    const Corpus corpus = small_corpus(cfg);
    Trainer t = Trainer::create(cfg, small_train(5));
    fit(t, corpus);
    const std::vector<double> z = corpus_latents(t.model(), corpus);
    long double n = z.size(), s1 = 0, s2 = 0;
    for (double v : z) {
        s1 += v;
        s2 += static_cast<long double>(v) * v;
    }
    const long double mean = s1 / n;
    long double c2 = 0, c3 = 0, c4 = 0;
    for (double v : z) {
        const long double d = v - mean;
        c2 += d * d;
        c3 += d * d * d;
        c4 += d * d * d * d;
    }
    c2 /= n;
    const LatentStats st = monitor_eval(t.model(), corpus);
    EXPECT_NEAR(st.mean, static_cast<double>(mean), 1e-10);
    EXPECT_NEAR(st.variance, static_cast<double>(c2), 1e-10);
    EXPECT_NEAR(st.skewness, static_cast<double>(c3 / n / std::pow(c2, 1.5L)), 1e-10);
    EXPECT_NEAR(st.kurtosis, static_cast<double>(c4 / n / (c2 * c2) - 3), 1e-10);
    EXPECT_NEAR(st.monitor, static_cast<double>(0.5L * s2 / n), 1e-10);
}

TEST(MonitorEval, StandardNormalLatentHasUnitVariance) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> z(200000);
    for (double& v : z) v = nd(rng);
    const LatentStats s = latent_stats(z);
    EXPECT_NEAR(s.variance, 1.0, 0.01);
    EXPECT_NEAR(s.monitor, 0.5, 0.01);
}
