#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "repr_store.hpp"
#include "rng.hpp"

namespace fp {

// ---------------------------------------------------------------------------
// Splits

enum class SplitPolicy { SpeakerDisjoint, Random };
enum class Bucket : std::uint8_t { Train, Val, Test };

inline std::string_view to_string(SplitPolicy p) {
    return p == SplitPolicy::SpeakerDisjoint ? "speaker_disjoint" : "random";
}

inline SplitPolicy parse_split_policy(std::string_view s) {
    if (s == "speaker_disjoint") return SplitPolicy::SpeakerDisjoint;
    if (s == "random") return SplitPolicy::Random;
    throw ConfigError("unknown split policy '" + std::string(s) + "'");
}

struct SplitAssignment {
    std::map<std::string, Bucket> buckets;
    SplitPolicy policy = SplitPolicy::Random;
    std::uint64_t seed = 0;

    std::optional<Bucket> of(const std::string& utterance_id) const {
        auto it = buckets.find(utterance_id);
        if (it == buckets.end()) return std::nullopt;
        return it->second;
    }

    std::size_t count(Bucket b) const {
        return static_cast<std::size_t>(
            std::count_if(buckets.begin(), buckets.end(), [b](const auto& kv) { return kv.second == b; }));
    }

    friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

namespace detail {

// 80/10/10 bucket sizes for n items: val and test get round(n / 10).
inline std::array<std::size_t, 3> split_targets(std::size_t n) {
    const std::size_t tenth = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 0.1));
    const std::size_t small = std::min(tenth, n / 2);
    return {n - 2 * small, small, small};
}

} // namespace detail

/// Assign each utterance to train/val/test. Deterministic in (labels, policy,
/// seed); the row order of `labels` does not matter.
inline SplitAssignment make_splits(const LabelTable& labels, SplitPolicy policy, std::uint64_t seed) {
    if (labels.empty()) throw PolicyError("cannot split an empty label table");

    std::map<std::string, std::optional<std::string>> speaker_of;
    for (const auto& r : labels.rows) {
        auto [it, inserted] = speaker_of.emplace(r.utterance_id, r.speaker_id);
        if (!inserted && !it->second && r.speaker_id) it->second = r.speaker_id;
    }

    SplitAssignment out;
    out.policy = policy;
    out.seed = seed;
    CounterRng rng = CounterRng(seed).split(policy == SplitPolicy::Random ? 1 : 2);

    if (policy == SplitPolicy::Random) {
        std::vector<std::string> ids;
        ids.reserve(speaker_of.size());
        for (const auto& kv : speaker_of) ids.push_back(kv.first);
        shuffle(std::span<std::string>(ids), rng);
        const auto sizes = detail::split_targets(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Bucket b = i < sizes[0] ? Bucket::Train : (i < sizes[0] + sizes[1] ? Bucket::Val : Bucket::Test);
            out.buckets[ids[i]] = b;
        }
        return out;
    }

    std::map<std::string, std::vector<std::string>> by_speaker;
    for (const auto& [utt, spk] : speaker_of) {
        if (!spk) throw PolicyError("speaker_disjoint split requires speaker_id for every utterance (missing for " + utt + ")");
        by_speaker[*spk].push_back(utt);
    }
    std::vector<std::string> speakers;
    for (const auto& kv : by_speaker) speakers.push_back(kv.first);
    shuffle(std::span<std::string>(speakers), rng);

    const auto targets = detail::split_targets(speaker_of.size());
    std::array<std::size_t, 3> filled{};
    auto assign = [&](const std::string& spk, std::size_t bucket) {
        for (const auto& utt : by_speaker[spk]) out.buckets[utt] = static_cast<Bucket>(bucket);
        filled[bucket] += by_speaker[spk].size();
    };
    std::size_t next = 0;
    if (speakers.size() >= 3) {
        // Seed the held-out buckets so neither ends up empty.
        assign(speakers[next++], 2);
        assign(speakers[next++], 1);
    }
    for (; next < speakers.size(); ++next) {
        std::size_t best = 0;
        long long best_deficit = std::numeric_limits<long long>::min();
        for (std::size_t b = 0; b < 3; ++b) {
            const long long deficit = static_cast<long long>(targets[b]) - static_cast<long long>(filled[b]);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = b;
            }
        }
        assign(speakers[next], best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Probe models

enum class RegressionSolver { ClosedForm, Adam };

struct ProbeOptions {
    RegressionSolver regression_solver = RegressionSolver::ClosedForm;
    double ridge_penalty = 1e-6;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    /// Worker threads used by probe_curve across layers (0 = hardware).
    std::size_t threads = 1;
};

/// Rows of a probing problem. `group` identifies the utterance of each row,
/// used to average classification accuracy per utterance.
struct ProbeDataset {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<Bucket> bucket;
    std::vector<std::size_t> group;
};

struct ProbeModel {
    Eigen::MatrixXd weights; // hidden x output
    Eigen::VectorXd bias;    // output
    TargetKind kind = TargetKind::Regression;

    std::size_t output_dim() const { return static_cast<std::size_t>(bias.size()); }

    Eigen::MatrixXd logits(const Eigen::MatrixXd& X) const {
        return (X * weights).rowwise() + bias.transpose();
    }

    Eigen::VectorXd predict_regression(const Eigen::MatrixXd& X) const { return logits(X).col(0); }

    std::vector<int> predict_class(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd z = logits(X);
        std::vector<int> out(static_cast<std::size_t>(z.rows()));
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            Eigen::Index arg = 0;
            z.row(i).maxCoeff(&arg);
            out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        }
        return out;
    }
};

struct ProbeFit {
    ProbeModel model;
    double score = 0.0; // test R^2 or per-utterance test accuracy
};

namespace detail {

inline std::vector<Eigen::Index> rows_in(const ProbeDataset& d, Bucket b) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < d.bucket.size(); ++i)
        if (d.bucket[i] == b) idx.push_back(static_cast<Eigen::Index>(i));
    return idx;
}

struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& X) {
        Standardizer s;
        s.mean = X.colwise().mean();
        s.scale.resize(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double var = (X.col(j).array() - s.mean(j)).square().mean();
            s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
        }
        return s;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
        return (X.rowwise() - mean).array().rowwise() / scale.array();
    }

    // Fold standardization into raw-space weights and bias.
    void unfold(Eigen::MatrixXd& w, Eigen::VectorXd& b) const {
        for (Eigen::Index j = 0; j < w.rows(); ++j) w.row(j) /= scale(j);
        b -= (mean * w).transpose();
    }
};

inline double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
    const double mean = y.mean();
    const double ss_tot = (y.array() - mean).square().sum();
    const double ss_res = (y - pred).squaredNorm();
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

// Adam state for one parameter block.
struct AdamState {
    Eigen::MatrixXd m, v;
    AdamState(Eigen::Index r, Eigen::Index c) : m(Eigen::MatrixXd::Zero(r, c)), v(Eigen::MatrixXd::Zero(r, c)) {}

    void step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, double lr, std::size_t t) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

// Mini-batch Adam with early stopping on validation loss. `loss_grad` returns
// the mean loss of a batch and writes gradients for the weights and bias.
// Returns the parameters at the best validation epoch.
template <typename LossGrad, typename Loss>
void adam_train(Eigen::MatrixXd& W, Eigen::MatrixXd& b, const Eigen::MatrixXd& Xtr, const Eigen::MatrixXd& Ytr,
                const Eigen::MatrixXd& Xval, const Eigen::MatrixXd& Yval, const ProbeOptions& opt, LossGrad&& loss_grad,
                Loss&& loss) {
    AdamState sw(W.rows(), W.cols()), sb(b.rows(), b.cols());
    const bool has_val = Xval.rows() > 0;
    const auto n = static_cast<std::size_t>(Xtr.rows());
    std::vector<Eigen::Index> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);

    Eigen::MatrixXd best_W = W, best_b = b;
    double best = has_val ? loss(W, b, Xval, Yval) : loss(W, b, Xtr, Ytr);
    std::size_t since_best = 0;
    std::size_t t = 0;
    Eigen::MatrixXd gW(W.rows(), W.cols()), gb(b.rows(), b.cols());
    const CounterRng base = CounterRng(opt.seed).split(0xada3);

    for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
        CounterRng rng = base.split(epoch);
        shuffle(std::span<Eigen::Index>(order), rng);
        for (std::size_t start = 0; start < n; start += opt.batch_size) {
            const std::size_t stop = std::min(n, start + opt.batch_size);
            std::vector<Eigen::Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(stop));
            const Eigen::MatrixXd xb = Xtr(batch, Eigen::all);
            const Eigen::MatrixXd yb = Ytr(batch, Eigen::all);
            loss_grad(W, b, xb, yb, gW, gb);
            ++t;
            sw.step(W, gW, opt.learning_rate, t);
            sb.step(b, gb, opt.learning_rate, t);
        }
        const double current = has_val ? loss(W, b, Xval, Yval) : loss(W, b, Xtr, Ytr);
        if (current < best) {
            best = current;
            best_W = W;
            best_b = b;
            since_best = 0;
        } else if (++since_best >= opt.patience) {
            break;
        }
    }
    W = std::move(best_W);
    b = std::move(best_b);
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p = z.colwise() - z.rowwise().maxCoeff();
    p = p.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

} // namespace detail

/// Linear regression probe scored by test-bucket R^2.
inline ProbeFit train_linear_probe(const ProbeDataset& data, const ProbeOptions& opt = {}) {
    const auto tr = detail::rows_in(data, Bucket::Train);
    const auto va = detail::rows_in(data, Bucket::Val);
    const auto te = detail::rows_in(data, Bucket::Test);
    if (tr.empty()) throw DegenerateTargetError("linear probe: empty train bucket");
    if (te.empty()) throw DegenerateTargetError("linear probe: empty test bucket");

    const Eigen::MatrixXd Xtr_raw = data.X(tr, Eigen::all);
    const Eigen::VectorXd ytr = data.y(tr);
    if ((ytr.array() == ytr(0)).all()) throw DegenerateTargetError("linear probe: constant target in train bucket");

    const auto sx = detail::Standardizer::fit(Xtr_raw);
    const Eigen::MatrixXd Xtr = sx.apply(Xtr_raw);
    const double y_mean = ytr.mean();
    const double y_scale = std::sqrt((ytr.array() - y_mean).square().mean());
    const Eigen::Index d = data.X.cols();

    ProbeModel model;
    model.kind = TargetKind::Regression;
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, 1);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(1);

    if (opt.regression_solver == RegressionSolver::ClosedForm) {
        // Standardized columns are centered, so the intercept is the target mean.
        Eigen::MatrixXd A = Xtr.transpose() * Xtr;
        A.diagonal().array() += opt.ridge_penalty;
        W.col(0) = A.ldlt().solve(Xtr.transpose() * (ytr.array() - y_mean).matrix());
        b(0) = y_mean;
    } else {
        const Eigen::MatrixXd Ytr = ((ytr.array() - y_mean) / y_scale).matrix();
        Eigen::MatrixXd Xva, Yva;
        if (!va.empty()) {
            Xva = sx.apply(data.X(va, Eigen::all));
            Yva = ((data.y(va).array() - y_mean) / y_scale).matrix();
        }
        Eigen::MatrixXd bias = Eigen::MatrixXd::Zero(1, 1);
        auto loss = [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& c, const Eigen::MatrixXd& x,
                       const Eigen::MatrixXd& yv) {
            return ((x * w).array() + c(0, 0) - yv.array()).square().mean();
        };
        auto loss_grad = [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& c, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& yv, Eigen::MatrixXd& gw, Eigen::MatrixXd& gc) {
            const Eigen::MatrixXd r = ((x * w).array() + c(0, 0) - yv.array()).matrix();
            const double scale = 2.0 / static_cast<double>(x.rows());
            gw = scale * x.transpose() * r;
            gc(0, 0) = scale * r.sum();
        };
        detail::adam_train(W, bias, Xtr, Ytr, Xva, Yva, opt, loss_grad, loss);
        W *= y_scale;
        b(0) = y_mean + y_scale * bias(0, 0);
    }
    sx.unfold(W, b);
    model.weights = std::move(W);
    model.bias = std::move(b);

    const Eigen::MatrixXd Xte = data.X(te, Eigen::all);
    const double r2 = detail::r_squared(data.y(te), model.predict_regression(Xte));
    return {std::move(model), r2};
}

/// Mean over test utterances of the per-utterance frame accuracy.
inline double per_utterance_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                                     const std::vector<std::size_t>& group) {
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> tally; // group -> (correct, total)
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        auto& t = tally[group[i]];
        t.first += predicted[i] == truth[i] ? 1 : 0;
        t.second += 1;
    }
    if (tally.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& kv : tally) sum += static_cast<double>(kv.second.first) / static_cast<double>(kv.second.second);
    return sum / static_cast<double>(tally.size());
}

/// Multinomial logistic probe over `num_classes` classes; y holds class
/// indices. Classes absent from the train bucket are never predicted.
inline ProbeFit train_logistic_probe(const ProbeDataset& data, int num_classes, const ProbeOptions& opt = {}) {
    const auto tr = detail::rows_in(data, Bucket::Train);
    const auto va = detail::rows_in(data, Bucket::Val);
    const auto te = detail::rows_in(data, Bucket::Test);
    if (tr.empty()) throw DegenerateTargetError("logistic probe: empty train bucket");
    if (te.empty()) throw DegenerateTargetError("logistic probe: empty test bucket");

    std::vector<int> present_index(static_cast<std::size_t>(num_classes), -1);
    std::vector<int> present;
    for (auto i : tr) {
        const int c = static_cast<int>(data.y(i));
        if (c < 0 || c >= num_classes) throw DataError("class label out of range");
        if (present_index[static_cast<std::size_t>(c)] < 0) present_index[static_cast<std::size_t>(c)] = 0;
    }
    for (int c = 0; c < num_classes; ++c)
        if (present_index[static_cast<std::size_t>(c)] == 0) {
            present_index[static_cast<std::size_t>(c)] = static_cast<int>(present.size());
            present.push_back(c);
        }
    if (present.size() < 2) throw DegenerateTargetError("logistic probe: fewer than 2 classes in train bucket");
    const auto k = static_cast<Eigen::Index>(present.size());

    auto one_hot = [&](const std::vector<Eigen::Index>& rows) {
        Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), k);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const int c = static_cast<int>(data.y(rows[i]));
            const int p = (c >= 0 && c < num_classes) ? present_index[static_cast<std::size_t>(c)] : -1;
            if (p >= 0) Y(static_cast<Eigen::Index>(i), p) = 1.0; // val rows of unseen classes contribute no target mass
        }
        return Y;
    };

    const Eigen::MatrixXd Xtr_raw = data.X(tr, Eigen::all);
    const auto sx = detail::Standardizer::fit(Xtr_raw);
    const Eigen::MatrixXd Xtr = sx.apply(Xtr_raw);
    const Eigen::MatrixXd Ytr = one_hot(tr);
    Eigen::MatrixXd Xva, Yva;
    if (!va.empty()) {
        Xva = sx.apply(data.X(va, Eigen::all));
        Yva = one_hot(va);
    }

    const Eigen::Index d = data.X.cols();
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, k);
    Eigen::MatrixXd bias = Eigen::MatrixXd::Zero(1, k);
    auto loss = [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& c, const Eigen::MatrixXd& x,
                   const Eigen::MatrixXd& yv) {
        const Eigen::MatrixXd z = (x * w).rowwise() + c.row(0);
        const Eigen::VectorXd mx = z.rowwise().maxCoeff();
        const Eigen::VectorXd lse = mx.array() + ((z.colwise() - mx).array().exp().rowwise().sum()).log();
        const Eigen::VectorXd picked = (z.array() * yv.array()).rowwise().sum();
        return (lse - picked).mean();
    };
    auto loss_grad = [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& c, const Eigen::MatrixXd& x,
                        const Eigen::MatrixXd& yv, Eigen::MatrixXd& gw, Eigen::MatrixXd& gc) {
        const Eigen::MatrixXd z = (x * w).rowwise() + c.row(0);
        const Eigen::MatrixXd r = detail::softmax_rows(z) - yv;
        const double scale = 1.0 / static_cast<double>(x.rows());
        gw = scale * x.transpose() * r;
        gc = scale * r.colwise().sum();
    };
    detail::adam_train(W, bias, Xtr, Ytr, Xva, Yva, opt, loss_grad, loss);

    ProbeModel model;
    model.kind = TargetKind::Classification;
    model.weights = Eigen::MatrixXd::Zero(d, num_classes);
    model.bias = Eigen::VectorXd::Constant(num_classes, -std::numeric_limits<double>::infinity());
    Eigen::VectorXd b_present = bias.row(0).transpose();
    sx.unfold(W, b_present);
    for (Eigen::Index p = 0; p < k; ++p) {
        model.weights.col(present[static_cast<std::size_t>(p)]) = W.col(p);
        model.bias(present[static_cast<std::size_t>(p)]) = b_present(p);
    }

    const Eigen::MatrixXd Xte = data.X(te, Eigen::all);
    const auto predicted = model.predict_class(Xte);
    std::vector<int> truth;
    std::vector<std::size_t> groups;
    for (auto i : te) {
        truth.push_back(static_cast<int>(data.y(i)));
        groups.push_back(data.group[static_cast<std::size_t>(i)]);
    }
    const double acc = per_utterance_accuracy(predicted, truth, groups);
    return {std::move(model), acc};
}

// ---------------------------------------------------------------------------
// Layer curves

struct LayerCurve {
    std::string model_id;
    std::string dataset_id;
    std::string target;
    std::vector<double> scores; // length L + 1

    std::size_t num_blocks() const { return scores.empty() ? 0 : scores.size() - 1; }

    friend bool operator==(const LayerCurve&, const LayerCurve&) = default;
};

/// Rows of one probing problem before hidden states are attached: which
/// frames feed each row (averaged), its target, bucket and utterance.
struct PooledRows {
    std::vector<std::vector<std::uint32_t>> frames;
    std::vector<double> y;
    std::vector<Bucket> bucket;
    std::vector<std::size_t> group;
};

/// Build pooled rows for `target`: per frame, per utterance (mean over the
/// utterance's frames) or per phoneme segment (mean over a run of
/// consecutive frames sharing phoneme and duration). Throws SkippedTarget
/// when no row carries the target.
inline PooledRows pool_rows(const LabelTable& labels, const ProbeTargetSpec& target, const SplitAssignment& split) {
    std::vector<const LabelRow*> rows;
    rows.reserve(labels.rows.size());
    for (const auto& r : labels.rows) rows.push_back(&r);
    std::sort(rows.begin(), rows.end(), [](const LabelRow* a, const LabelRow* b) {
        return std::tie(a->utterance_id, a->frame_index) < std::tie(b->utterance_id, b->frame_index);
    });

    std::map<std::string, std::size_t> utt_index;
    for (const auto* r : rows) utt_index.emplace(r->utterance_id, utt_index.size());

    PooledRows out;
    auto push = [&](std::vector<std::uint32_t> frames, double y, const std::string& utt) {
        auto b = split.of(utt);
        if (!b) throw PolicyError("split does not cover utterance " + utt);
        out.frames.push_back(std::move(frames));
        out.y.push_back(y);
        out.bucket.push_back(*b);
        out.group.push_back(utt_index.at(utt));
    };

    switch (target.pooling) {
    case Pooling::Frame:
        for (const auto* r : rows)
            if (auto v = target_value(*r, target)) push({r->frame_index}, *v, r->utterance_id);
        break;
    case Pooling::Utterance: {
        std::size_t i = 0;
        while (i < rows.size()) {
            std::size_t j = i;
            std::vector<std::uint32_t> frames;
            double sum = 0.0;
            std::size_t n = 0;
            for (; j < rows.size() && rows[j]->utterance_id == rows[i]->utterance_id; ++j) {
                frames.push_back(rows[j]->frame_index);
                if (auto v = target_value(*rows[j], target)) {
                    sum += *v;
                    ++n;
                }
            }
            if (n > 0) push(std::move(frames), sum / static_cast<double>(n), rows[i]->utterance_id);
            i = j;
        }
        break;
    }
    case Pooling::Segment: {
        std::size_t i = 0;
        while (i < rows.size()) {
            const auto v = target_value(*rows[i], target);
            if (!v) {
                ++i;
                continue;
            }
            std::size_t j = i + 1;
            while (j < rows.size() && rows[j]->utterance_id == rows[i]->utterance_id &&
                   rows[j]->frame_index == rows[j - 1]->frame_index + 1 && rows[j]->phoneme == rows[i]->phoneme &&
                   target_value(*rows[j], target) == v)
                ++j;
            std::vector<std::uint32_t> frames;
            for (std::size_t k = i; k < j; ++k) frames.push_back(rows[k]->frame_index);
            push(std::move(frames), *v, rows[i]->utterance_id);
            i = j;
        }
        break;
    }
    }
    if (out.y.empty()) throw SkippedTarget("target " + target.name + " absent from label table");
    return out;
}

inline ProbeDataset layer_dataset(const TensorStack& stack, std::size_t layer, const PooledRows& rows) {
    ProbeDataset d;
    const auto n = static_cast<Eigen::Index>(rows.y.size());
    const auto h = static_cast<Eigen::Index>(stack.hidden_dim());
    d.X.resize(n, h);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& frames = rows.frames[static_cast<std::size_t>(i)];
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(h);
        for (auto f : frames) {
            if (f >= stack.num_frames()) throw ShapeError("label frame_index beyond stack frames");
            const auto v = stack.frame(layer, f);
            for (Eigen::Index k = 0; k < h; ++k) acc(k) += v[static_cast<std::size_t>(k)];
        }
        d.X.row(i) = acc / static_cast<double>(frames.size());
    }
    d.y = Eigen::Map<const Eigen::VectorXd>(rows.y.data(), n);
    d.bucket = rows.bucket;
    d.group = rows.group;
    return d;
}

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
    return requested;
}

/// Probe every layer of `stack` for `target`. All layers share the split and
/// the solver seed, so identical layers score identically.
inline LayerCurve probe_curve(const TensorStack& stack, const LabelTable& labels, const ProbeTargetSpec& target,
                              const SplitAssignment& split, const ProbeOptions& opt = {},
                              const std::string& model_id = {}, const std::string& dataset_id = {}) {
    const PooledRows rows = pool_rows(labels, target, split);
    const std::size_t layers = stack.num_layers_plus_1();
    std::vector<double> scores(layers, 0.0);
    std::vector<std::exception_ptr> errors(layers);

    auto work = [&](std::size_t l) {
        try {
            const ProbeDataset d = layer_dataset(stack, l, rows);
            scores[l] = target.kind == TargetKind::Regression ? train_linear_probe(d, opt).score
                                                              : train_logistic_probe(d, target.num_classes, opt).score;
        } catch (...) {
            errors[l] = std::current_exception();
        }
    };

    const std::size_t threads = std::min(resolve_threads(opt.threads), layers);
    if (threads <= 1) {
        for (std::size_t l = 0; l < layers; ++l) work(l);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t l = next++; l < layers; l = next++) work(l);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return {model_id, dataset_id, target.name, std::move(scores)};
}

// ---------------------------------------------------------------------------
// Curve files: model_id,dataset_id,target,layer_index,score

inline void write_curves(const std::vector<LayerCurve>& curves, std::ostream& out) {
    out << "model_id,dataset_id,target,layer_index,score\n";
    for (const auto& c : curves)
        for (std::size_t l = 0; l < c.scores.size(); ++l)
            out << c.model_id << ',' << c.dataset_id << ',' << c.target << ',' << l << ','
                << csv::format_double(c.scores[l]) << '\n';
}

inline void write_curves(const std::vector<LayerCurve>& curves, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_curves(curves, out);
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<LayerCurve> parse_curves(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("curve file: missing header");
    using Key = std::tuple<std::string, std::string, std::string>;
    std::map<Key, std::map<std::size_t, double>> grouped;
    std::vector<Key> order;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = csv::split(line);
        if (cells.size() != 5) throw FormatError("curve file: expected 5 columns, got '" + line + "'");
        Key key{cells[0], cells[1], cells[2]};
        if (!grouped.count(key)) order.push_back(key);
        const auto l = csv::parse_int(cells[3], "layer_index");
        if (l < 0) throw FormatError("curve file: negative layer_index");
        if (!grouped[key].emplace(static_cast<std::size_t>(l), csv::parse_double(cells[4], "score")).second)
            throw FormatError("curve file: duplicate layer for " + cells[0] + "/" + cells[1] + "/" + cells[2]);
    }
    std::vector<LayerCurve> curves;
    for (const auto& key : order) {
        const auto& layers = grouped[key];
        LayerCurve c{std::get<0>(key), std::get<1>(key), std::get<2>(key), {}};
        std::size_t expect = 0;
        for (const auto& [l, s] : layers) {
            if (l != expect++) throw FormatError("curve file: layers not contiguous for " + c.model_id + "/" + c.target);
            c.scores.push_back(s);
        }
        if (c.scores.size() < 2) throw FormatError("curve file: curve needs at least 2 layers");
        curves.push_back(std::move(c));
    }
    return curves;
}

inline std::vector<LayerCurve> read_curves(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open curve file " + path.string());
    return parse_curves(in);
}

} // namespace fp
