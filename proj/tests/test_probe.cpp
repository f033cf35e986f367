#include <gtest/gtest.h>

#include <algorithm>
#include <fp/probe.hpp>
#include <random>
#include <set>
#include <sstream>

#include "synth.hpp"

using namespace fp;

namespace {

LabelTable utterances(std::size_t n, std::size_t speakers = 0) {
    LabelTable t;
    for (std::size_t u = 0; u < n; ++u) {
        LabelRow r;
        r.utterance_id = "u" + std::to_string(u);
        r.frame_index = static_cast<std::uint32_t>(u);
        if (speakers) r.speaker_id = "s" + std::to_string(u % speakers);
        t.rows.push_back(r);
    }
    return t;
}

// Rows assigned to buckets by index: 8 of every 10 train, then one val, one test.
// Each row is its own group unless `per_group` > 1.
ProbeDataset dataset(Eigen::MatrixXd X, Eigen::VectorXd y, std::size_t per_group = 1) {
    ProbeDataset d;
    const auto n = static_cast<std::size_t>(X.rows());
    d.X = std::move(X);
    d.y = std::move(y);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t g = i / per_group;
        d.group.push_back(g);
        const std::size_t m = g % 10;
        d.bucket.push_back(m < 8 ? Bucket::Train : (m == 8 ? Bucket::Val : Bucket::Test));
    }
    return d;
}

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::mt19937_64& gen) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = normal(gen);
    return X;
}

std::vector<Eigen::Index> rows_of(const ProbeDataset& d, Bucket b) {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < d.bucket.size(); ++i)
        if (d.bucket[i] == b) out.push_back(static_cast<Eigen::Index>(i));
    return out;
}

// Plain OLS with intercept fitted on the train bucket through the normal
// equations, scored on the test bucket.
double ols_test_r2(const ProbeDataset& d) {
    const auto tr = rows_of(d, Bucket::Train), te = rows_of(d, Bucket::Test);
    const Eigen::Index k = d.X.cols() + 1;
    Eigen::MatrixXd A(static_cast<Eigen::Index>(tr.size()), k);
    A.col(0).setOnes();
    A.rightCols(k - 1) = d.X(tr, Eigen::all);
    const Eigen::VectorXd beta = (A.transpose() * A).inverse() * (A.transpose() * d.y(tr));
    Eigen::MatrixXd B(static_cast<Eigen::Index>(te.size()), k);
    B.col(0).setOnes();
    B.rightCols(k - 1) = d.X(te, Eigen::all);
    const Eigen::VectorXd yte = d.y(te);
    const Eigen::VectorXd pred = B * beta;
    return 1.0 - (yte - pred).squaredNorm() / (yte.array() - yte.mean()).square().sum();
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

TensorStack scaled(const TensorStack& s, float factor) {
    std::vector<float> v(s.data().begin(), s.data().end());
    for (auto& x : v) x *= factor;
    return TensorStack(s.num_layers_plus_1(), s.num_frames(), s.hidden_dim(), std::move(v), s.frame_rate_hz());
}

} // namespace

// ---------------------------------------------------------------------------
// Splits

TEST(Splits, RandomTenUtterancesIsEightOneOne) {
    const auto t = utterances(10);
    const auto s = make_splits(t, SplitPolicy::Random, 7);
    EXPECT_EQ(s.count(Bucket::Train), 8u);
    EXPECT_EQ(s.count(Bucket::Val), 1u);
    EXPECT_EQ(s.count(Bucket::Test), 1u);
    EXPECT_EQ(s, make_splits(t, SplitPolicy::Random, 7));
}

TEST(Splits, SeedChangesAssignment) {
    const auto t = utterances(200);
    EXPECT_NE(make_splits(t, SplitPolicy::Random, 1).buckets, make_splits(t, SplitPolicy::Random, 2).buckets);
}

TEST(Splits, IndependentOfRowOrder) {
    auto t = utterances(60, 12);
    const auto a = make_splits(t, SplitPolicy::SpeakerDisjoint, 3);
    const auto r = make_splits(t, SplitPolicy::Random, 3);
    std::mt19937_64 gen(5);
    std::shuffle(t.rows.begin(), t.rows.end(), gen);
    EXPECT_EQ(a, make_splits(t, SplitPolicy::SpeakerDisjoint, 3));
    EXPECT_EQ(r, make_splits(t, SplitPolicy::Random, 3));
}

TEST(Splits, SpeakerDisjointKeepsSpeakersTogether) {
    const auto t = utterances(30, 3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = make_splits(t, SplitPolicy::SpeakerDisjoint, seed);
        std::map<std::string, std::set<Bucket>> seen;
        for (const auto& r : t.rows) seen[*r.speaker_id].insert(*s.of(r.utterance_id));
        for (const auto& [spk, buckets] : seen) EXPECT_EQ(buckets.size(), 1u) << spk;
        EXPECT_GT(s.count(Bucket::Test), 0u);
        EXPECT_GT(s.count(Bucket::Val), 0u);
        EXPECT_GT(s.count(Bucket::Train), 0u);
    }
}

TEST(Splits, SpeakerDisjointProportionsOnEvenSpeakers) {
    const auto s = make_splits(utterances(200, 20), SplitPolicy::SpeakerDisjoint, 11);
    EXPECT_EQ(s.count(Bucket::Train), 160u);
    EXPECT_EQ(s.count(Bucket::Val), 20u);
    EXPECT_EQ(s.count(Bucket::Test), 20u);
}

TEST(Splits, MissingSpeakerIsPolicyError) {
    auto t = utterances(10, 2);
    t.rows[4].speaker_id.reset();
    EXPECT_THROW(make_splits(t, SplitPolicy::SpeakerDisjoint, 0), PolicyError);
    EXPECT_NO_THROW(make_splits(t, SplitPolicy::Random, 0));
    EXPECT_THROW(make_splits(LabelTable{}, SplitPolicy::Random, 0), PolicyError);
}

// ---------------------------------------------------------------------------
// Linear probe

TEST(LinearProbe, NoiselessTargetGivesUnitR2) {
    std::mt19937_64 gen(1);
    Eigen::MatrixXd X = gaussian(500, 8, gen);
    Eigen::VectorXd w(8);
    w << 1, -2, 0.5, 0, 3, -1, 0.25, 2;
    const Eigen::VectorXd y = (X * w).array() + 4.0;
    const auto fit = train_linear_probe(dataset(X, y));
    EXPECT_NEAR(fit.score, 1.0, 1e-6);
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(fit.model.weights(j, 0), w(j), 1e-4);
    EXPECT_NEAR(fit.model.bias(0), 4.0, 1e-4);
}

TEST(LinearProbe, RecoversSlopeAndIntercept) {
    Eigen::MatrixXd X(100, 1);
    Eigen::VectorXd y(100);
    for (int i = 0; i < 100; ++i) {
        X(i, 0) = -3.0 + 0.06 * i;
        y(i) = 2.0 * X(i, 0) + 1.0;
    }
    const auto fit = train_linear_probe(dataset(X, y));
    EXPECT_NEAR(fit.model.weights(0, 0), 2.0, 1e-6);
    EXPECT_NEAR(fit.model.bias(0), 1.0, 1e-6);
}

TEST(LinearProbe, IndependentTargetMatchesNormalEquations) {
    std::mt19937_64 gen(2);
    const Eigen::MatrixXd X = gaussian(1000, 8, gen);
    Eigen::VectorXd y = gaussian(1000, 1, gen).col(0);
    const auto d = dataset(X, y);
    const auto fit = train_linear_probe(d);
    EXPECT_LE(fit.score, 0.05);
    EXPECT_NEAR(fit.score, ols_test_r2(d), 1e-6);
}

TEST(LinearProbe, PermutedLabelsLoseSignal) {
    std::mt19937_64 gen(3);
    const Eigen::MatrixXd X = gaussian(1000, 8, gen);
    Eigen::VectorXd y = X.col(0) * 3.0 + 0.1 * gaussian(1000, 1, gen).col(0);
    EXPECT_GT(train_linear_probe(dataset(X, y)).score, 0.9);
    std::shuffle(y.begin(), y.end(), gen);
    const auto d = dataset(X, y);
    const auto fit = train_linear_probe(d);
    EXPECT_LE(fit.score, 0.05);
    EXPECT_NEAR(fit.score, ols_test_r2(d), 1e-6);
}

TEST(LinearProbe, DegenerateInputs) {
    std::mt19937_64 gen(4);
    const Eigen::MatrixXd X = gaussian(50, 3, gen);
    EXPECT_THROW(train_linear_probe(dataset(X, Eigen::VectorXd::Constant(50, 2.0))), DegenerateTargetError);
    auto d = dataset(X, gaussian(50, 1, gen).col(0));
    for (auto& b : d.bucket)
        if (b == Bucket::Test) b = Bucket::Train;
    EXPECT_THROW(train_linear_probe(d), DegenerateTargetError);
}

TEST(LinearProbe, AdamAgreesWithClosedForm) {
    // 50 well-conditioned, high-SNR instances. At noise sd 0.5 the fixed-rate
    // mini-batch jitter around the optimum alone costs up to ~4e-3 in R^2.
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const Eigen::Index n = 4000, dim = 8;
        const Eigen::MatrixXd X = gaussian(n, dim, gen);
        Eigen::VectorXd w(dim);
        for (auto& x : w) x = unif(gen);
        const Eigen::VectorXd y = (X * w).array() + 0.5 + 0.02 * gaussian(n, 1, gen).col(0).array();
        const auto d = dataset(X, y);
        ProbeOptions closed, adam;
        adam.regression_solver = RegressionSolver::Adam;
        adam.seed = static_cast<std::uint64_t>(inst);
        const double gap = std::abs(train_linear_probe(d, closed).score - train_linear_probe(d, adam).score);
        worst = std::max(worst, gap);
    }
    EXPECT_LE(worst, 1e-4);
}

// ---------------------------------------------------------------------------
// Logistic probe

TEST(LogisticProbe, SeparableBlobsAreFullyAccurate) {
    std::mt19937_64 gen(5);
    Eigen::MatrixXd X = gaussian(400, 4, gen);
    Eigen::VectorXd y(400);
    for (Eigen::Index i = 0; i < 400; ++i) {
        y(i) = static_cast<double>(i % 2);
        X(i, 0) += i % 2 ? 6.0 : -6.0;
    }
    const auto fit = train_logistic_probe(dataset(X, y, 4), 2);
    EXPECT_EQ(fit.score, 1.0);
}

TEST(LogisticProbe, IndependentLabelsStayNearChance) {
    // 500 utterances x 20 frames; the test bucket holds 50 utterances (1000 frames).
    std::mt19937_64 gen(6);
    const Eigen::Index n = 500 * 20;
    const Eigen::MatrixXd X = gaussian(n, 16, gen);
    Eigen::VectorXd y(n);
    std::bernoulli_distribution coin(0.5);
    for (auto& v : y) v = coin(gen) ? 1.0 : 0.0;
    const auto fit = train_logistic_probe(dataset(X, y, 20), 2);
    const double sd = std::sqrt(0.25 / 1000.0);
    EXPECT_NEAR(fit.score, 0.5, 3.0 * sd);
    EXPECT_GE(fit.score, 0.4);
    EXPECT_LE(fit.score, 0.6);
}

TEST(LogisticProbe, AbsentClassesAreNeverPredicted) {
    std::mt19937_64 gen(7);
    const Eigen::MatrixXd X = gaussian(600, 6, gen);
    Eigen::VectorXd y(600);
    for (Eigen::Index i = 0; i < 600; ++i) y(i) = X(i, 1) > 0 ? 30.0 : 3.0;
    const auto fit = train_logistic_probe(dataset(X, y), kNumPhonemeClasses);
    EXPECT_EQ(fit.model.output_dim(), static_cast<std::size_t>(kNumPhonemeClasses));
    const Eigen::MatrixXd probe = 10.0 * gaussian(2000, 6, gen);
    for (int c : fit.model.predict_class(probe)) EXPECT_TRUE(c == 3 || c == 30) << c;
    EXPECT_GT(fit.score, 0.9);
}

TEST(LogisticProbe, SingleClassIsDegenerate) {
    std::mt19937_64 gen(8);
    EXPECT_THROW(train_logistic_probe(dataset(gaussian(50, 3, gen), Eigen::VectorXd::Ones(50)), 2),
                 DegenerateTargetError);
    EXPECT_THROW(train_logistic_probe(dataset(gaussian(50, 3, gen), Eigen::VectorXd::Constant(50, 5.0)), 2),
                 DataError);
}

TEST(LogisticProbe, DeterministicForSeed) {
    std::mt19937_64 gen(9);
    const Eigen::MatrixXd X = gaussian(500, 5, gen);
    Eigen::VectorXd y(500);
    for (Eigen::Index i = 0; i < 500; ++i) y(i) = X(i, 0) + 0.5 * X(i, 2) > 0 ? 1.0 : 0.0;
    ProbeOptions opt;
    opt.seed = 42;
    const auto a = train_logistic_probe(dataset(X, y), 2, opt);
    const auto b = train_logistic_probe(dataset(X, y), 2, opt);
    EXPECT_EQ(a.model.weights, b.model.weights);
    EXPECT_EQ(a.score, b.score);
}

TEST(Accuracy, PerUtteranceMeanNotPooled) {
    // Utterance 0: 1 of 1 correct; utterance 1: 1 of 3 correct.
    const std::vector<int> pred = {1, 0, 0, 1}, truth = {1, 0, 1, 0};
    const std::vector<std::size_t> group = {0, 1, 1, 1};
    EXPECT_DOUBLE_EQ(per_utterance_accuracy(pred, truth, group), (1.0 + 1.0 / 3.0) / 2.0);
}

TEST(Accuracy, FrameDuplicationLeavesAccuracyUnchanged) {
    std::mt19937_64 gen(10);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> pred, truth, p2, t2;
    std::vector<std::size_t> group, g2;
    for (std::size_t u = 0; u < 30; ++u)
        for (std::size_t f = 0; f < 1 + u % 7; ++f) {
            const int p = cls(gen), t = cls(gen);
            pred.push_back(p);
            truth.push_back(t);
            group.push_back(u);
            for (int k = 0; k < 3; ++k) {
                p2.push_back(p);
                t2.push_back(t);
                g2.push_back(u);
            }
        }
    EXPECT_DOUBLE_EQ(per_utterance_accuracy(pred, truth, group), per_utterance_accuracy(p2, t2, g2));
}

// ---------------------------------------------------------------------------
// Curves

TEST(Curves, PlantedLayerPeaks) {
    synth::PlantedSpec spec;
    spec.num_blocks = 8;
    spec.planted_layer = 5;
    spec.utterances = 100;
    const auto b = synth::planted(spec);
    const auto split = make_splits(b.labels, SplitPolicy::SpeakerDisjoint, 1);
    const auto phon = probe_curve(b.stack, b.labels, *find_target("phoneme"), split, {}, "m", "d");
    ASSERT_EQ(phon.scores.size(), 9u);
    EXPECT_EQ(argmax(phon.scores), 5u);
    EXPECT_GT(phon.scores[5], 0.8);
    EXPECT_EQ(phon.model_id, "m");
    EXPECT_EQ(phon.target, "phoneme");
    const auto ac = probe_curve(b.stack, b.labels, *find_target("acoustic_00"), split);
    EXPECT_EQ(argmax(ac.scores), 5u);
    EXPECT_GT(ac.scores[5], 0.5);
}

TEST(Curves, IdenticalLayersScoreIdentically) {
    synth::PlantedSpec spec;
    spec.num_blocks = 1;
    spec.planted_layer = 0;
    spec.utterances = 60;
    const auto b = synth::planted(spec);
    // Copy layer 0 over layer 1.
    std::vector<float> v(b.stack.data().begin(), b.stack.data().end());
    const std::size_t per = b.stack.num_frames() * b.stack.hidden_dim();
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(per), v.begin() + static_cast<std::ptrdiff_t>(per));
    const TensorStack same(2, b.stack.num_frames(), b.stack.hidden_dim(), std::move(v), 50.0);
    const auto split = make_splits(b.labels, SplitPolicy::Random, 2);
    for (const char* t : {"phoneme", "acoustic_00"}) {
        const auto c = probe_curve(same, b.labels, *find_target(t), split);
        EXPECT_EQ(c.scores[0], c.scores[1]) << t;
    }
}

TEST(Curves, InvariantToHiddenStateScale) {
    synth::PlantedSpec spec;
    spec.num_blocks = 4;
    spec.planted_layer = 2;
    spec.utterances = 200;
    const auto b = synth::planted(spec);
    const auto split = make_splits(b.labels, SplitPolicy::SpeakerDisjoint, 3);
    for (const char* t : {"phoneme", "acoustic_00"}) {
        const auto base = probe_curve(b.stack, b.labels, *find_target(t), split);
        const auto big = probe_curve(scaled(b.stack, 1000.0f), b.labels, *find_target(t), split);
        const auto small = probe_curve(scaled(b.stack, 1e-3f), b.labels, *find_target(t), split);
        for (std::size_t l = 0; l < base.scores.size(); ++l) {
            EXPECT_NEAR(big.scores[l], base.scores[l], 1e-6) << t << " layer " << l;
            EXPECT_NEAR(small.scores[l], base.scores[l], 1e-6) << t << " layer " << l;
        }
    }
}

TEST(Curves, ThreadCountDoesNotChangeScores) {
    synth::PlantedSpec spec;
    spec.num_blocks = 6;
    spec.utterances = 40;
    spec.planted_layer = 3;
    const auto b = synth::planted(spec);
    const auto split = make_splits(b.labels, SplitPolicy::SpeakerDisjoint, 4);
    ProbeOptions one, many;
    many.threads = 4;
    EXPECT_EQ(probe_curve(b.stack, b.labels, *find_target("phoneme"), split, one).scores,
              probe_curve(b.stack, b.labels, *find_target("phoneme"), split, many).scores);
}

TEST(Curves, AbsentTargetIsSkipped) {
    synth::PlantedSpec spec;
    spec.utterances = 10;
    const auto b = synth::planted(spec);
    const auto split = make_splits(b.labels, SplitPolicy::Random, 0);
    EXPECT_THROW(probe_curve(b.stack, b.labels, *find_target("gender"), split), SkippedTarget);
    EXPECT_THROW(probe_curve(b.stack, b.labels, *find_target("duration"), split), SkippedTarget);
}

TEST(Pooling, SegmentsAreRunsOfEqualPhonemeAndDuration) {
    LabelTable t;
    const std::vector<int> ph = {1, 1, 2, 2, 2, 1};
    const std::vector<double> dur = {20, 20, 30, 30, 30, 10};
    for (std::uint32_t f = 0; f < 6; ++f) {
        LabelRow r;
        r.utterance_id = "a";
        r.frame_index = f;
        r.phoneme = ph[f];
        r.duration_ms = dur[f];
        t.rows.push_back(r);
    }
    std::reverse(t.rows.begin(), t.rows.end());
    const SplitAssignment split{{{"a", Bucket::Train}}, SplitPolicy::Random, 0};
    const auto rows = pool_rows(t, *find_target("duration"), split);
    ASSERT_EQ(rows.y.size(), 3u);
    EXPECT_EQ(rows.frames[0], (std::vector<std::uint32_t>{0, 1}));
    EXPECT_EQ(rows.frames[1], (std::vector<std::uint32_t>{2, 3, 4}));
    EXPECT_EQ(rows.y, (std::vector<double>{20, 30, 10}));

    const auto utt = pool_rows(t, *find_target("phoneme"), split);
    EXPECT_EQ(utt.y.size(), 6u);

    const SplitAssignment empty;
    EXPECT_THROW(pool_rows(t, *find_target("phoneme"), empty), PolicyError);
}

TEST(CurveFile, RoundTripAndErrors) {
    const std::vector<LayerCurve> curves = {{"m1", "d", "gender", {0.5, 0.75, 0.625}},
                                            {"m2", "d", "acoustic_03", {-0.1, 0.2}}};
    std::stringstream ss;
    write_curves(curves, ss);
    auto back = parse_curves(ss);
    std::sort(back.begin(), back.end(), [](const auto& a, const auto& b) { return a.model_id < b.model_id; });
    EXPECT_EQ(back, curves);

    std::stringstream gap("model_id,dataset_id,target,layer_index,score\nm,d,t,0,0.1\nm,d,t,2,0.2\n");
    EXPECT_THROW(parse_curves(gap), FormatError);
    std::stringstream single("model_id,dataset_id,target,layer_index,score\nm,d,t,0,0.1\n");
    EXPECT_THROW(parse_curves(single), FormatError);
    std::stringstream dup("model_id,dataset_id,target,layer_index,score\nm,d,t,0,0.1\nm,d,t,0,0.2\n");
    EXPECT_THROW(parse_curves(dup), FormatError);
}
