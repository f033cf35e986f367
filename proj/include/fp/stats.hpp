#pragma once

// Architecture comparison statistics over fingerprint profiles.
//
// Sign convention everywhere: delta = mean(first group) - mean(second group),
// with Conformer as the first group in architecture comparisons; t and
// Cohen's d carry the same sign as delta.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "metrics.hpp"
#include "repr_store.hpp"
#include "rng.hpp"
#include "special.hpp"

namespace fp {

namespace detail {

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Sum of squared deviations from the mean.
inline double sum_sq_dev(std::span<const double> v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// t-tests

struct TTestResult {
    std::string group;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    double mean_a = 0.0;
    double mean_b = 0.0;
    double delta = 0.0;
    double t = 0.0;
    int df = 0;
    double p = 1.0;
    double cohens_d = 0.0;
    bool bonferroni_significant = false;
};

/// Pooled-variance Student t-test of mean(a) - mean(b).
inline TTestResult two_sample_t(std::span<const double> a, std::span<const double> b, std::string group = {}) {
    if (a.size() < 2 || b.size() < 2)
        throw SampleSizeError("two-sample t-test needs at least 2 values per group (got " + std::to_string(a.size()) +
                              " and " + std::to_string(b.size()) + ")");
    TTestResult r;
    r.group = std::move(group);
    r.n_a = a.size();
    r.n_b = b.size();
    r.mean_a = detail::mean_of(a);
    r.mean_b = detail::mean_of(b);
    r.delta = r.mean_a - r.mean_b;
    r.df = static_cast<int>(a.size() + b.size() - 2);
    const double pooled_var =
        (detail::sum_sq_dev(a, r.mean_a) + detail::sum_sq_dev(b, r.mean_b)) / static_cast<double>(r.df);
    const double sd = std::sqrt(pooled_var);
    if (sd == 0.0) {
        if (r.delta == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
            r.cohens_d = 0.0;
        } else {
            r.t = std::copysign(std::numeric_limits<double>::infinity(), r.delta);
            r.p = 0.0;
            r.cohens_d = r.t;
        }
        return r;
    }
    const double se = sd * std::sqrt(1.0 / static_cast<double>(r.n_a) + 1.0 / static_cast<double>(r.n_b));
    r.t = r.delta / se;
    r.p = special::student_t_two_tailed(r.t, r.df);
    r.cohens_d = r.delta / sd;
    return r;
}

/// Flag results whose full-precision p falls below alpha / family_size.
inline std::vector<TTestResult> bonferroni(std::vector<TTestResult> results, std::size_t family_size,
                                           double alpha = 0.05) {
    if (family_size == 0) family_size = 1;
    const double cut = alpha / static_cast<double>(family_size);
    for (auto& r : results) r.bonferroni_significant = r.p < cut;
    return results;
}

struct PairedTResult {
    std::string group;
    std::size_t n = 0;
    double delta = 0.0; // mean of a - b
    double t = 0.0;
    int df = 0;
    double p = 1.0;
};

/// One-sample t-test on the aligned differences a[i] - b[i].
inline PairedTResult paired_t(std::span<const double> a, std::span<const double> b, std::string group = {}) {
    if (a.size() != b.size()) throw PairingError("paired t-test needs equal-length vectors");
    if (a.size() < 2) throw SampleSizeError("paired t-test needs at least 2 pairs");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    PairedTResult r;
    r.group = std::move(group);
    r.n = diff.size();
    r.delta = detail::mean_of(diff);
    r.df = static_cast<int>(diff.size() - 1);
    const double sd = std::sqrt(detail::sum_sq_dev(diff, r.delta) / static_cast<double>(r.df));
    if (sd == 0.0) {
        r.t = r.delta == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.delta);
        r.p = r.delta == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = r.delta / (sd / std::sqrt(static_cast<double>(r.n)));
    r.p = special::student_t_two_tailed(r.t, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapCI {
    std::string group;
    double delta = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t resamples = 0;
    std::uint64_t seed = 0;
    double level = 0.95;
};

/// Percentile bootstrap interval for mean(a) - mean(b). Each group is
/// resampled with replacement at its own size; resample r draws from the
/// stream split(r) of the seed, so any thread count gives the same result.
inline BootstrapCI bootstrap_mean_diff_ci(std::span<const double> a, std::span<const double> b,
                                          std::size_t resamples = 10000, double level = 0.95,
                                          std::uint64_t seed = 0, std::size_t threads = 1) {
    if (a.size() < 1 || b.size() < 1 || a.size() + b.size() < 3)
        throw SampleSizeError("bootstrap needs non-empty groups");
    if (resamples == 0) throw SampleSizeError("bootstrap needs at least one resample");
    BootstrapCI ci;
    ci.delta = detail::mean_of(a) - detail::mean_of(b);
    ci.resamples = resamples;
    ci.seed = seed;
    ci.level = level;

    std::vector<double> stats(resamples);
    const CounterRng base(seed);
    auto draw = [&](std::size_t r) {
        CounterRng rng = base.split(r);
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) sa += a[static_cast<std::size_t>(rng.below(a.size()))];
        for (std::size_t i = 0; i < b.size(); ++i) sb += b[static_cast<std::size_t>(rng.below(b.size()))];
        stats[r] = sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
    };
    if (threads <= 1) {
        for (std::size_t r = 0; r < resamples; ++r) draw(r);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t r = t; r < resamples; r += threads) draw(r);
            });
        for (auto& th : pool) th.join();
    }
    std::sort(stats.begin(), stats.end());
    const double alpha = 1.0 - level;
    ci.ci_low = special::quantile_sorted(stats, alpha / 2.0);
    ci.ci_high = special::quantile_sorted(stats, 1.0 - alpha / 2.0);
    return ci;
}

// ---------------------------------------------------------------------------
// Profile helpers

/// Values of `group` for (Conformer, Transformer) profiles; absent entries skipped.
inline std::pair<std::vector<double>, std::vector<double>> split_by_architecture(
    std::span<const FingerprintProfile> profiles, TargetGroup group) {
    std::pair<std::vector<double>, std::vector<double>> out;
    for (const auto& p : profiles) {
        const auto v = p.at(group);
        if (!v) continue;
        (p.architecture == Architecture::Conformer ? out.first : out.second).push_back(*v);
    }
    return out;
}

inline TTestResult compare_architectures(std::span<const FingerprintProfile> profiles, TargetGroup group) {
    const auto [conf, trans] = split_by_architecture(profiles, group);
    return two_sample_t(conf, trans, std::string(group_name(group)));
}

// ---------------------------------------------------------------------------
// Regression: position = b0 + b_arch * [Conformer] + b_size * ln(params)

struct RegressionFit {
    std::string group;
    std::size_t n = 0;
    int df = 0;
    std::array<double, 3> beta{};     // intercept, arch, size
    std::array<double, 3> se{};
    std::array<double, 3> t{};
    std::array<double, 3> p{};
    std::array<double, 3> beta_std{}; // standardized; intercept is 0
    double r_squared = 0.0;
};

inline RegressionFit ols_arch_size(std::span<const FingerprintProfile> profiles, TargetGroup group) {
    std::vector<const FingerprintProfile*> rows;
    for (const auto& p : profiles)
        if (p.at(group)) rows.push_back(&p);
    if (rows.size() < 4) throw SampleSizeError("regression needs at least 4 profiles");
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    bool any_conf = false, any_trans = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto* p = rows[static_cast<std::size_t>(i)];
        if (p->param_count == 0) throw DataError("profile " + p->model_id + " has no parameter count");
        const bool conf = p->architecture == Architecture::Conformer;
        any_conf |= conf;
        any_trans |= !conf;
        X(i, 0) = 1.0;
        X(i, 1) = conf ? 1.0 : 0.0;
        X(i, 2) = std::log(static_cast<double>(p->param_count));
        y(i) = *p->at(group);
    }
    if (!any_conf || !any_trans) throw SampleSizeError("regression needs both architectures present");

    const Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
    lu.setThreshold(1e-10);
    if (lu.rank() < 3) throw SingularDesignError("design matrix is rank deficient");
    const Eigen::MatrixXd xtx_inv = lu.inverse();
    const Eigen::VectorXd beta = xtx_inv * X.transpose() * y;
    const Eigen::VectorXd resid = y - X * beta;

    RegressionFit fit;
    fit.group = std::string(group_name(group));
    fit.n = rows.size();
    fit.df = static_cast<int>(n) - 3;
    const double ss_res = resid.squaredNorm();
    const double y_mean = y.mean();
    const double ss_tot = (y.array() - y_mean).square().sum();
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
    const double sigma2 = fit.df > 0 ? ss_res / fit.df : std::numeric_limits<double>::quiet_NaN();
    auto sd = [&](const Eigen::VectorXd& v) {
        return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
    };
    const double sd_y = sd(y);
    for (int j = 0; j < 3; ++j) {
        fit.beta[j] = beta(j);
        fit.se[j] = std::sqrt(sigma2 * xtx_inv(j, j));
        fit.t[j] = fit.se[j] > 0.0 ? beta(j) / fit.se[j] : 0.0;
        fit.p[j] = fit.se[j] > 0.0 ? special::student_t_two_tailed(fit.t[j], fit.df) : 1.0;
        fit.beta_std[j] = j == 0 || sd_y == 0.0 ? 0.0 : beta(j) * sd(X.col(j)) / sd_y;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Architecture classifier

struct ClassifierOptions {
    /// Inverse L2 strength; the intercept is not penalized.
    double inverse_regularization = 1.0;
    std::size_t max_iterations = 200;
    double tolerance = 1e-12;
};

struct LogisticModel {
    Eigen::VectorXd coef;
    double intercept = 0.0;
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    double probability(const Eigen::RowVectorXd& x) const {
        const double z = intercept + ((x - mean).array() / scale.array()).matrix().dot(coef);
        return 1.0 / (1.0 + std::exp(-z));
    }
};

namespace detail {

inline double log1pexp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Minimizes 0.5 |w|^2 + C * sum(log(1 + e^z) - y z), z = b + Z w, by damped Newton.
inline void fit_l2_logistic(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const ClassifierOptions& opt,
                            Eigen::VectorXd& w, double& b) {
    const Eigen::Index n = Z.rows(), p = Z.cols();
    const double C = opt.inverse_regularization;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 1); // [w, b]
    Eigen::MatrixXd A(n, p + 1);
    A << Z, Eigen::VectorXd::Ones(n);

    auto objective = [&](const Eigen::VectorXd& th) {
        const Eigen::VectorXd z = A * th;
        double f = 0.5 * th.head(p).squaredNorm();
        for (Eigen::Index i = 0; i < n; ++i) f += C * (log1pexp(z(i)) - y(i) * z(i));
        return f;
    };

    double f = objective(theta);
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        const Eigen::VectorXd z = A * theta;
        const Eigen::VectorXd prob = (1.0 / (1.0 + (-z.array()).exp())).matrix();
        Eigen::VectorXd grad = C * A.transpose() * (prob - y);
        grad.head(p) += theta.head(p);
        if (grad.lpNorm<Eigen::Infinity>() < opt.tolerance) break;
        const Eigen::VectorXd s = (prob.array() * (1.0 - prob.array())).matrix();
        Eigen::MatrixXd H = C * A.transpose() * s.asDiagonal() * A;
        H.diagonal().head(p).array() += 1.0;
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        double alpha = 1.0;
        Eigen::VectorXd next = theta - step;
        double f_next = objective(next);
        while (f_next > f && alpha > 1e-10) {
            alpha *= 0.5;
            next = theta - alpha * step;
            f_next = objective(next);
        }
        if (f_next > f) break;
        theta = next;
        f = f_next;
    }
    w = theta.head(p);
    b = theta(p);
}

inline Eigen::MatrixXd profile_matrix(std::span<const FingerprintProfile> profiles) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(profiles.size()), static_cast<Eigen::Index>(kNumGroups));
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (!profiles[i].complete())
            throw IncompleteProfileError("profile " + profiles[i].model_id + " is missing a feature group");
        for (std::size_t g = 0; g < kNumGroups; ++g)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) = *profiles[i].position[g];
    }
    return X;
}

inline Eigen::VectorXd conformer_labels(std::span<const FingerprintProfile> profiles) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(profiles.size()));
    for (std::size_t i = 0; i < profiles.size(); ++i)
        y(static_cast<Eigen::Index>(i)) = profiles[i].architecture == Architecture::Conformer ? 1.0 : 0.0;
    return y;
}

inline LogisticModel fit_standardized(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ClassifierOptions& opt) {
    LogisticModel m;
    m.mean = X.colwise().mean();
    m.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double var = (X.col(j).array() - m.mean(j)).square().mean();
        m.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    const Eigen::MatrixXd Z = (X.rowwise() - m.mean).array().rowwise() / m.scale.array();
    fit_l2_logistic(Z, y, opt, m.coef, m.intercept);
    return m;
}

} // namespace detail

struct ClassifierFit {
    std::array<double, kNumGroups> coefficients{}; // standardized, in group order
    double intercept = 0.0;
    LogisticModel model;

    /// Groups ordered by decreasing |coefficient|.
    std::vector<TargetGroup> ranked() const {
        std::vector<TargetGroup> order(kGroups.begin(), kGroups.end());
        std::stable_sort(order.begin(), order.end(), [&](TargetGroup a, TargetGroup b) {
            return std::fabs(coefficients[group_index(a)]) > std::fabs(coefficients[group_index(b)]);
        });
        return order;
    }
};

/// L2-regularized logistic regression of [Conformer] on z-scored position
/// vectors (population standard deviation).
inline ClassifierFit fit_classifier(std::span<const FingerprintProfile> profiles, const ClassifierOptions& opt = {}) {
    const Eigen::MatrixXd X = detail::profile_matrix(profiles);
    const Eigen::VectorXd y = detail::conformer_labels(profiles);
    if (y.sum() == 0.0 || y.sum() == static_cast<double>(y.size()))
        throw SampleSizeError("classifier needs both architectures present");
    ClassifierFit fit;
    fit.model = detail::fit_standardized(X, y, opt);
    for (std::size_t g = 0; g < kNumGroups; ++g) fit.coefficients[g] = fit.model.coef(static_cast<Eigen::Index>(g));
    fit.intercept = fit.model.intercept;
    return fit;
}

/// Area under the ROC curve via the Mann-Whitney rank statistic with
/// mid-ranks for ties. Positive class = true.
inline double rank_auc(std::span<const double> scores, const std::vector<bool>& positive) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (positive[i]) {
            rank_sum += rank[i];
            ++n_pos;
        }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw SampleSizeError("AUC needs both classes");
    const double u = rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct ClassifierReport {
    double auc = 0.0;
    std::size_t correct = 0;
    std::size_t n = 0;
    double loo_accuracy = 0.0;
    ClassifierFit full_fit;                  // coefficients on all profiles
    std::vector<std::string> model_ids;
    std::vector<double> loo_probability;     // P(Conformer) for each held-out model
    std::vector<bool> is_conformer;
};

/// Leave-one-out evaluation: standardization and fit use the remaining N - 1
/// profiles; the held-out model is classified Conformer when p > 0.5.
inline ClassifierReport loo_auc(std::span<const FingerprintProfile> profiles, const ClassifierOptions& opt = {}) {
    if (profiles.size() < 3) throw SampleSizeError("leave-one-out needs at least 3 profiles");
    const Eigen::MatrixXd X = detail::profile_matrix(profiles);
    const Eigen::VectorXd y = detail::conformer_labels(profiles);
    const auto n = X.rows();
    ClassifierReport rep;
    rep.n = static_cast<std::size_t>(n);
    rep.full_fit = fit_classifier(profiles, opt);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> keep;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) keep.push_back(j);
        const Eigen::MatrixXd Xk = X(keep, Eigen::all);
        const Eigen::VectorXd yk = y(keep);
        if (yk.sum() == 0.0 || yk.sum() == static_cast<double>(yk.size()))
            throw SampleSizeError("leave-one-out fold lost a class");
        const auto model = detail::fit_standardized(Xk, yk, opt);
        const double prob = model.probability(X.row(i));
        const bool conf = y(i) == 1.0;
        rep.model_ids.push_back(profiles[static_cast<std::size_t>(i)].model_id);
        rep.loo_probability.push_back(prob);
        rep.is_conformer.push_back(conf);
        if ((prob > 0.5) == conf) ++rep.correct;
    }
    rep.auc = rank_auc(rep.loo_probability, rep.is_conformer);
    rep.loo_accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.n);
    return rep;
}

// ---------------------------------------------------------------------------
// Robustness

struct SensitivityEntry {
    std::string excluded_model;
    TTestResult result;
};

struct SensitivityReport {
    std::string group;
    TTestResult baseline;
    std::vector<SensitivityEntry> entries;
    std::size_t most_influential = 0; // index into entries: largest |delta change|
};

/// Re-run the architecture t-test once per excluded model.
inline SensitivityReport sensitivity_loo_models(std::span<const FingerprintProfile> profiles, TargetGroup group) {
    SensitivityReport rep;
    rep.group = std::string(group_name(group));
    rep.baseline = compare_architectures(profiles, group);
    double worst = -1.0;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (!profiles[i].at(group)) continue;
        std::vector<FingerprintProfile> rest;
        for (std::size_t j = 0; j < profiles.size(); ++j)
            if (j != i) rest.push_back(profiles[j]);
        TTestResult r;
        try {
            r = compare_architectures(rest, group);
        } catch (const SampleSizeError&) {
            continue;
        }
        const double change = std::fabs(r.delta - rep.baseline.delta);
        if (change > worst) {
            worst = change;
            rep.most_influential = rep.entries.size();
        }
        rep.entries.push_back({profiles[i].model_id, r});
    }
    return rep;
}

inline const SensitivityEntry* find_exclusion(const SensitivityReport& rep, const std::string& model_id) {
    for (const auto& e : rep.entries)
        if (e.excluded_model == model_id) return &e;
    return nullptr;
}

/// Two-sample t-test between profiles matching `in_subgroup` (first group) and
/// the rest.
inline TTestResult subgroup_compare(std::span<const FingerprintProfile> profiles,
                                    const std::function<bool(const std::string&)>& in_subgroup, TargetGroup group) {
    std::vector<double> a, b;
    for (const auto& p : profiles) {
        const auto v = p.at(group);
        if (!v) continue;
        (in_subgroup(p.model_id) ? a : b).push_back(*v);
    }
    return two_sample_t(a, b, std::string(group_name(group)));
}

} // namespace fp
