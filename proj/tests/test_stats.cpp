#include <gtest/gtest.h>

#include <cmath>
#include <fp/special.hpp>
#include <fp/stats.hpp>
#include <random>

using namespace fp;

namespace {

FingerprintProfile profile(const std::string& id, Architecture arch, std::uint64_t params,
                           std::array<double, kNumGroups> pos) {
    FingerprintProfile p;
    p.model_id = id;
    p.architecture = arch;
    p.param_count = params;
    for (std::size_t g = 0; g < kNumGroups; ++g) p.position[g] = pos[g];
    return p;
}

} // namespace

// Reference values below were frozen from scipy.special / scipy.stats.

TEST(Special, IncompleteBetaMatchesReference) {
    EXPECT_NEAR(special::incomplete_beta(2.5, 0.5, 0.3), 0.018927124071945658, 1e-13);
    EXPECT_NEAR(special::incomplete_beta(11, 0.5, 0.9), 0.1322131047913527, 1e-13);
    EXPECT_NEAR(special::incomplete_beta(1, 1, 0.37), 0.37, 1e-14);
    EXPECT_NEAR(special::incomplete_beta(0.5, 0.5, 0.5), 0.5, 1e-14);
    EXPECT_NEAR(special::incomplete_beta(30, 2, 0.95), 0.5365969098573434, 1e-13);
    EXPECT_EQ(special::incomplete_beta(2, 3, 0.0), 0.0);
    EXPECT_EQ(special::incomplete_beta(2, 3, 1.0), 1.0);
}

TEST(Special, StudentTTwoTailed) {
    EXPECT_NEAR(special::student_t_two_tailed(2.0, 10), 0.07338803477074039, 1e-13);
    EXPECT_NEAR(special::student_t_two_tailed(0.5, 3), 0.651447964848151, 1e-13);
    EXPECT_NEAR(special::student_t_two_tailed(5.0, 22), 5.2684120757182e-05, 1e-16);
    EXPECT_NEAR(special::student_t_two_tailed(-1.3, 7), 0.23476783539237717, 1e-13);
    EXPECT_EQ(special::student_t_two_tailed(0.0, 5), 1.0);
}

TEST(Special, QuantileLinearInterpolation) {
    const std::vector<double> v = {1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(special::quantile_sorted(v, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(special::quantile_sorted(v, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(special::quantile_sorted(v, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(special::quantile_sorted(v, 0.25), 1.75);
}

TEST(TTest, MatchesScipy) {
    const std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 4, 6};
    const auto r = two_sample_t(b, a);
    EXPECT_NEAR(r.t, 0.7905694150420948, 1e-12);
    EXPECT_NEAR(r.p, 0.4592934580377557, 1e-12);
    EXPECT_EQ(r.df, 6);
    EXPECT_DOUBLE_EQ(r.delta, 1.0);

    const std::vector<double> c = {0.31, 0.29, 0.44, 0.12, 0.51, 0.38}, d = {0.11, 0.21, 0.18, 0.09};
    const auto s = two_sample_t(c, d);
    EXPECT_NEAR(s.t, 2.664488962319576, 1e-12);
    EXPECT_NEAR(s.p, 0.028605643286078036, 1e-12);
}

TEST(TTest, SignsFollowDelta) {
    const std::vector<double> lo = {0.1, 0.2, 0.15}, hi = {0.5, 0.6, 0.55, 0.7};
    const auto r = two_sample_t(lo, hi);
    EXPECT_LT(r.delta, 0);
    EXPECT_LT(r.t, 0);
    EXPECT_LT(r.cohens_d, 0);
}

TEST(TTest, IdenticalGroupsGiveZeroEffect) {
    const std::vector<double> a = {0.2, 0.4, 0.6};
    const auto r = two_sample_t(a, a);
    EXPECT_EQ(r.delta, 0.0);
    EXPECT_EQ(r.t, 0.0);
    EXPECT_EQ(r.cohens_d, 0.0);
    EXPECT_NEAR(r.p, 1.0, 1e-12);
}

TEST(TTest, LocationAndScaleEquivariance) {
    const std::vector<double> a = {0.31, 0.29, 0.44, 0.12, 0.51}, b = {0.11, 0.21, 0.18, 0.09};
    const auto base = two_sample_t(a, b);
    auto shifted = [](std::vector<double> v, double k, double c) {
        for (auto& x : v) x = k * x + c;
        return v;
    };
    const auto r = two_sample_t(shifted(a, 3.0, 7.0), shifted(b, 3.0, 7.0));
    EXPECT_NEAR(r.delta, 3.0 * base.delta, 1e-12);
    EXPECT_NEAR(r.t, base.t, 1e-9);
    EXPECT_NEAR(r.p, base.p, 1e-9);
    EXPECT_NEAR(r.cohens_d, base.cohens_d, 1e-9);
}

TEST(TTest, TooFewValuesThrows) {
    const std::vector<double> one = {0.5}, two = {0.1, 0.2};
    EXPECT_THROW(two_sample_t(one, one), SampleSizeError);
    EXPECT_THROW(two_sample_t(one, two), SampleSizeError);
    EXPECT_NO_THROW(two_sample_t(two, two));
}

TEST(TTest, BonferroniUsesFullPrecision) {
    std::vector<TTestResult> rs(2);
    rs[0].p = 0.0099;
    rs[1].p = 0.0101;
    const auto out = bonferroni(rs, 5);
    EXPECT_TRUE(out[0].bonferroni_significant);
    EXPECT_FALSE(out[1].bonferroni_significant);
}

TEST(PairedT, MatchesScipy) {
    const std::vector<double> x = {0.2, 0.5, 0.1, 0.9, 0.4}, y = {0.1, 0.7, 0.3, 0.5, 0.2};
    const auto r = paired_t(x, y);
    EXPECT_NEAR(r.t, 0.5144957554275267, 1e-12);
    EXPECT_NEAR(r.p, 0.6340271611962769, 1e-12);
    EXPECT_EQ(r.df, 4);
}

TEST(PairedT, LengthMismatchThrows) {
    const std::vector<double> x = {0.2, 0.5}, y = {0.1};
    EXPECT_THROW(paired_t(x, y), PairingError);
}

// Sizes (2, 1): the resampled difference takes a1-b, (a1+a2)/2-b, a2-b with
// probabilities 1/4, 1/2, 1/4. Percentile endpoints must land on the values
// the exact distribution puts at those quantiles.
TEST(Bootstrap, MatchesExhaustiveEnumerationForSizes21) {
    const std::vector<double> a = {0.2, 0.8}, b = {0.3};
    std::vector<double> exact;
    for (double x : a)
        for (double y : a) exact.push_back((x + y) / 2.0 - b[0]);
    std::sort(exact.begin(), exact.end());
    const double lo_exact = exact.front(), hi_exact = exact.back(), mid = exact[1];

    const auto ci = bootstrap_mean_diff_ci(a, b, 10000, 0.95, 42);
    EXPECT_DOUBLE_EQ(ci.ci_low, lo_exact);
    EXPECT_DOUBLE_EQ(ci.ci_high, hi_exact);
    EXPECT_DOUBLE_EQ(ci.delta, 0.2);

    // A 40% interval sits inside the probability-1/2 atom.
    const auto narrow = bootstrap_mean_diff_ci(a, b, 10000, 0.40, 42);
    EXPECT_DOUBLE_EQ(narrow.ci_low, mid);
    EXPECT_DOUBLE_EQ(narrow.ci_high, mid);
}

TEST(Bootstrap, DeterministicAndThreadInvariant) {
    const std::vector<double> a = {0.31, 0.29, 0.44, 0.12, 0.51, 0.38, 0.27}, b = {0.11, 0.21, 0.18, 0.09, 0.3};
    const auto r1 = bootstrap_mean_diff_ci(a, b, 5000, 0.95, 7, 1);
    const auto r2 = bootstrap_mean_diff_ci(a, b, 5000, 0.95, 7, 1);
    const auto r4 = bootstrap_mean_diff_ci(a, b, 5000, 0.95, 7, 4);
    EXPECT_EQ(r1.ci_low, r2.ci_low);
    EXPECT_EQ(r1.ci_high, r2.ci_high);
    EXPECT_EQ(r1.ci_low, r4.ci_low);
    EXPECT_EQ(r1.ci_high, r4.ci_high);
    EXPECT_LE(r1.ci_low, r1.delta);
    EXPECT_GE(r1.ci_high, r1.delta);
}

TEST(Bootstrap, IdenticalGroupsCoverZero) {
    const std::vector<double> a = {0.2, 0.4, 0.6, 0.3};
    const auto ci = bootstrap_mean_diff_ci(a, a, 4000, 0.95, 1);
    EXPECT_EQ(ci.delta, 0.0);
    EXPECT_LT(ci.ci_low, 0.0);
    EXPECT_GT(ci.ci_high, 0.0);
}

// Reference fit frozen from statsmodels OLS on the same 12 rows.
TEST(Regression, MatchesStatsmodels) {
    const std::array<int, 12> arch = {1, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0};
    const std::array<double, 12> params = {1e8, 2e8, 5e8, 1e9, 3e8, 7e8, 4e7, 2e9, 1.5e9, 6e8, 9e7, 3e9};
    const std::array<double, 12> y = {0.670, 0.554, 0.622, 0.686, 0.668, 0.597,
                                      0.549, 0.717, 0.579, 0.870, 0.678, 0.719};
    std::vector<FingerprintProfile> ps;
    for (std::size_t i = 0; i < 12; ++i)
        ps.push_back(profile("m" + std::to_string(i), arch[i] ? Architecture::Conformer : Architecture::Transformer,
                             static_cast<std::uint64_t>(params[i]), {0, y[i], 0, 0, 0}));
    const auto fit = ols_arch_size(ps, TargetGroup::Gender);
    EXPECT_NEAR(fit.beta[0], 0.193306601363, 1e-9);
    EXPECT_NEAR(fit.beta[1], -0.0670084972951, 1e-9);
    EXPECT_NEAR(fit.beta[2], 0.0245516299393, 1e-9);
    EXPECT_NEAR(fit.p[0], 0.62456917453, 1e-8);
    EXPECT_NEAR(fit.p[1], 0.230896554136, 1e-8);
    EXPECT_NEAR(fit.p[2], 0.232568587968, 1e-8);
    EXPECT_NEAR(fit.r_squared, 0.256719381749, 1e-9);
    EXPECT_EQ(fit.df, 9);
}

TEST(Regression, RecoversNoiselessCoefficients) {
    std::vector<FingerprintProfile> ps;
    const std::array<double, 8> params = {4e7, 9e7, 3e8, 6e8, 1e9, 2e9, 1.5e8, 8e8};
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool conf = i % 3 == 0;
        const double y = 0.1 - 0.2 * conf + 0.03 * std::log(params[i]);
        ps.push_back(profile("m" + std::to_string(i), conf ? Architecture::Conformer : Architecture::Transformer,
                             static_cast<std::uint64_t>(params[i]), {y, 0, 0, 0, 0}));
    }
    const auto fit = ols_arch_size(ps, TargetGroup::Acoustic);
    EXPECT_NEAR(fit.beta[0], 0.1, 1e-9);
    EXPECT_NEAR(fit.beta[1], -0.2, 1e-10);
    EXPECT_NEAR(fit.beta[2], 0.03, 1e-11);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
}

TEST(Regression, CollinearDesignThrows) {
    std::vector<FingerprintProfile> ps;
    for (int i = 0; i < 6; ++i)
        ps.push_back(profile("m" + std::to_string(i), i < 3 ? Architecture::Conformer : Architecture::Transformer,
                             i < 3 ? 100000000 : 300000000, {0.1 * i, 0, 0, 0, 0}));
    EXPECT_THROW(ols_arch_size(ps, TargetGroup::Acoustic), SingularDesignError);
}

TEST(Regression, TooFewProfilesThrows) {
    std::vector<FingerprintProfile> ps = {profile("a", Architecture::Conformer, 100, {0.1, 0, 0, 0, 0}),
                                          profile("b", Architecture::Transformer, 200, {0.2, 0, 0, 0, 0}),
                                          profile("c", Architecture::Transformer, 400, {0.3, 0, 0, 0, 0})};
    EXPECT_THROW(ols_arch_size(ps, TargetGroup::Acoustic), SampleSizeError);
}

// Reference coefficients frozen from sklearn LogisticRegression(C=1) on
// StandardScaler-transformed features.
TEST(Classifier, MatchesSklearn) {
    const double X[14][5] = {{-0.28, -0.67, -1.06, -0.39, 0.48}, {-0.24, 0.96, -0.20, 0.02, 1.55},
                             {0.55, -0.51, -0.18, 0.54, 1.94},   {-0.27, -0.24, 1.00, -0.89, -0.29},
                             {0.88, 0.58, 0.09, 0.67, -2.83},    {1.02, -0.96, -1.67, 0.28, 0.70},
                             {-0.44, -1.08, 0.03, -0.05, 1.41},  {0.75, 0.19, 1.11, -0.21, -0.93},
                             {0.58, 0.58, -0.21, -0.78, 0.23},   {-2.49, 0.69, 0.49, -1.64, 0.06},
                             {-0.96, 0.76, -2.03, -0.91, 0.71},  {1.16, -2.16, -0.50, 0.33, -0.61},
                             {1.59, -1.19, 0.35, -1.05, 1.41},   {-0.02, -0.37, -1.72, 1.68, 0.75}};
    const int y[14] = {1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0};
    std::vector<FingerprintProfile> ps;
    for (int i = 0; i < 14; ++i)
        ps.push_back(profile("m" + std::to_string(i), y[i] ? Architecture::Conformer : Architecture::Transformer, 1,
                             {X[i][0], X[i][1], X[i][2], X[i][3], X[i][4]}));
    const auto fit = fit_classifier(ps);
    const double expect[5] = {-0.1439671986, -0.77498666, 0.3462311805, -0.05165505946, 0.207105578};
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(fit.coefficients[k], expect[k], 1e-7) << k;
    EXPECT_NEAR(fit.intercept, -0.3308462943, 1e-7);
}

TEST(Classifier, SingleClassThrows) {
    std::vector<FingerprintProfile> ps;
    for (int i = 0; i < 4; ++i)
        ps.push_back(profile("m" + std::to_string(i), Architecture::Transformer, 1, {0.1 * i, 0.2, 0.3, 0.4, 0.5}));
    EXPECT_THROW(fit_classifier(ps), SampleSizeError);
}

TEST(Classifier, IncompleteProfileThrows) {
    std::vector<FingerprintProfile> ps;
    for (int i = 0; i < 4; ++i)
        ps.push_back(profile("m" + std::to_string(i), i % 2 ? Architecture::Conformer : Architecture::Transformer, 1,
                             {0.1 * i, 0.2, 0.3, 0.4, 0.5}));
    ps[2].position[3].reset();
    EXPECT_THROW(fit_classifier(ps), IncompleteProfileError);
}

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
    double wins = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) (pos[i] ? np : nn)++;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (pos[i] && !pos[j]) wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

} // namespace

TEST(Auc, MatchesPairEnumerationExactly) {
    std::mt19937_64 gen(11);
    int checked = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 2 + gen() % 7; // 2..8
        std::vector<double> s(n);
        std::vector<bool> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(gen() % 5) / 4.0; // coarse values force ties
            pos[i] = gen() % 2;
        }
        if (std::count(pos.begin(), pos.end(), true) == 0 || std::count(pos.begin(), pos.end(), false) == 0) continue;
        ASSERT_EQ(rank_auc(s, pos), brute_auc(s, pos));
        ++checked;
    }
    EXPECT_GT(checked, 1500);
}

TEST(Auc, LabelFlipGivesComplement) {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8, 0.8, 0.2};
    std::vector<bool> pos = {false, true, false, true, false, true};
    std::vector<bool> neg(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) neg[i] = !pos[i];
    EXPECT_DOUBLE_EQ(rank_auc(s, pos) + rank_auc(s, neg), 1.0);
}

TEST(Auc, PerfectSeparation) {
    const std::vector<double> s = {0.1, 0.2, 0.9, 0.8};
    EXPECT_EQ(rank_auc(s, {false, false, true, true}), 1.0);
    EXPECT_EQ(rank_auc(s, {true, true, false, false}), 0.0);
}

TEST(LooAuc, SeparableProfilesClassifyPerfectly) {
    std::vector<FingerprintProfile> ps;
    for (int i = 0; i < 10; ++i) {
        const bool conf = i < 4;
        const double shift = conf ? -0.3 : 0.3;
        ps.push_back(profile("m" + std::to_string(i), conf ? Architecture::Conformer : Architecture::Transformer, 1,
                             {0.5 + shift + 0.01 * i, 0.5 + shift, 0.5 - 0.02 * i, 0.4 + shift, 0.3}));
    }
    const auto rep = loo_auc(ps);
    EXPECT_EQ(rep.auc, 1.0);
    EXPECT_EQ(rep.correct, 10u);
    EXPECT_EQ(rep.n, 10u);
}

TEST(Sensitivity, ExclusionMatchesDirectTest) {
    std::vector<FingerprintProfile> ps;
    for (int i = 0; i < 8; ++i)
        ps.push_back(profile("m" + std::to_string(i), i < 3 ? Architecture::Conformer : Architecture::Transformer, 1,
                             {0.1 * i, 0.05 * i * i, 0.3, 0.4, 0.5}));
    const auto rep = sensitivity_loo_models(ps, TargetGroup::Gender);
    EXPECT_EQ(rep.entries.size(), 8u);
    std::vector<FingerprintProfile> rest(ps.begin(), ps.end());
    rest.erase(rest.begin() + 1);
    const auto direct = compare_architectures(rest, TargetGroup::Gender);
    const auto* e = find_exclusion(rep, "m1");
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->result.delta, direct.delta);
    EXPECT_EQ(e->result.p, direct.p);
}

TEST(Subgroup, SplitsByPredicate) {
    std::vector<FingerprintProfile> ps = {profile("whisper-a", Architecture::Transformer, 1, {0, 0.4, 0, 0, 0}),
                                          profile("whisper-b", Architecture::Transformer, 1, {0, 0.5, 0, 0, 0}),
                                          profile("hubert", Architecture::Transformer, 1, {0, 0.1, 0, 0, 0}),
                                          profile("wavlm", Architecture::Transformer, 1, {0, 0.2, 0, 0, 0})};
    const auto r = subgroup_compare(
        ps, [](const std::string& id) { return id.rfind("whisper", 0) == 0; }, TargetGroup::Gender);
    EXPECT_NEAR(r.mean_a, 0.45, 1e-15);
    EXPECT_NEAR(r.mean_b, 0.15, 1e-15);
}
