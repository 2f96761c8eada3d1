#include "meud/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meud/errors.hpp"

namespace meud {

namespace {

// Squared Euclidean distance; ranking-equivalent to the true distance.
double sqdist(const Matrix& m, std::size_t a, std::size_t b) {
    const auto ra = m.row(a);
    const auto rb = m.row(b);
    double acc = 0.0;
    for (std::size_t j = 0; j < ra.size(); ++j) {
        const double d = ra[j] - rb[j];
        acc += d * d;
    }
    return acc;
}

// Indices 0..m-1 except self, sorted by (distance to i, index).
std::vector<int> sorted_neighbors(const Matrix& m, std::size_t i) {
    std::vector<std::pair<double, int>> order;
    order.reserve(m.rows() - 1);
    for (std::size_t j = 0; j < m.rows(); ++j) {
        if (j == i) continue;
        order.emplace_back(sqdist(m, i, j), static_cast<int>(j));
    }
    std::sort(order.begin(), order.end());
    std::vector<int> out(order.size());
    for (std::size_t t = 0; t < order.size(); ++t) out[t] = order[t].second;
    return out;
}

}  // namespace

NeighborRanks compute_neighbor_ranks(const Matrix& original, const Matrix& embedded, int k) {
    const std::size_t m = original.rows();
    if (embedded.rows() != m) {
        throw DimensionError("trustworthiness: row count mismatch " + original.shape_str() +
                             " vs " + embedded.shape_str());
    }
    if (m < 3) throw ConfigError("trustworthiness: need at least 3 samples");
    if (k < 1 || 2 * static_cast<std::size_t>(k) >= m) {
        throw ConfigError("trustworthiness: k = " + std::to_string(k) +
                          " out of range, formula requires 1 <= k < m/2");
    }

    NeighborRanks ranks;
    ranks.rank_in_original.assign(m, std::vector<int>(m, 0));
    ranks.knn_original.resize(m);
    ranks.knn_embedded.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::vector<int> orig = sorted_neighbors(original, i);
        for (std::size_t t = 0; t < orig.size(); ++t) {
            ranks.rank_in_original[i][orig[t]] = static_cast<int>(t) + 1;
        }
        ranks.knn_original[i].assign(orig.begin(), orig.begin() + k);
        const std::vector<int> emb = sorted_neighbors(embedded, i);
        ranks.knn_embedded[i].assign(emb.begin(), emb.begin() + k);
    }
    return ranks;
}

double trustworthiness(const Matrix& original, const Matrix& embedded, int k) {
    const NeighborRanks ranks = compute_neighbor_ranks(original, embedded, k);
    const std::size_t m = original.rows();

    double penalty = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& orig_knn = ranks.knn_original[i];
        for (int j : ranks.knn_embedded[i]) {
            if (std::find(orig_knn.begin(), orig_knn.end(), j) != orig_knn.end()) continue;
            penalty += ranks.rank_in_original[i][j] - k;
        }
    }
    const double norm = static_cast<double>(m) * k * (2.0 * m - 3.0 * k - 1.0);
    return 1.0 - (2.0 / norm) * penalty;
}

namespace {

int infer_classes(const std::vector<int>& labels, int num_classes) {
    if (num_classes > 0) return num_classes;
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    return max_label + 1;
}

}  // namespace

ClassifierOutput knn_classify(const Matrix& train_emb, const std::vector<int>& train_labels,
                              const Matrix& test_emb, int k, int num_classes) {
    const std::size_t m = train_emb.rows();
    if (m == 0) throw ConfigError("knn: empty training set");
    if (train_labels.size() != m) throw DimensionError("knn: label count mismatch");
    if (test_emb.cols() != train_emb.cols()) {
        throw DimensionError("knn: feature width mismatch " + train_emb.shape_str() + " vs " +
                             test_emb.shape_str());
    }
    if (k < 1) throw ConfigError("knn: k must be >= 1");
    const int p = infer_classes(train_labels, num_classes);
    const std::size_t k_eff = std::min<std::size_t>(k, m);

    ClassifierOutput out;
    out.predicted.resize(test_emb.rows());
    out.scores = Matrix(test_emb.rows(), p);
    std::vector<std::pair<double, int>> order(m);
    for (std::size_t t = 0; t < test_emb.rows(); ++t) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto a = test_emb.row(t);
            const auto b = train_emb.row(j);
            double acc = 0.0;
            for (std::size_t f = 0; f < a.size(); ++f) {
                const double d = a[f] - b[f];
                acc += d * d;
            }
            order[j] = {acc, static_cast<int>(j)};
        }
        std::partial_sort(order.begin(), order.begin() + k_eff, order.end());

        std::vector<int> votes(p, 0);
        for (std::size_t v = 0; v < k_eff; ++v) votes[train_labels[order[v].second]]++;
        int best = 0;
        for (int c = 1; c < p; ++c) {
            if (votes[c] > votes[best]) best = c;
        }
        out.predicted[t] = best;
        for (int c = 0; c < p; ++c) {
            out.scores(t, c) = static_cast<double>(votes[c]) / static_cast<double>(k_eff);
        }
    }
    return out;
}

ClassifierOutput gnb_fit_predict(const Matrix& train_emb, const std::vector<int>& train_labels,
                                 const Matrix& test_emb, int num_classes) {
    const std::size_t m = train_emb.rows();
    const std::size_t n = train_emb.cols();
    if (m == 0) throw ConfigError("gnb: empty training set");
    if (train_labels.size() != m) throw DimensionError("gnb: label count mismatch");
    if (test_emb.cols() != n) {
        throw DimensionError("gnb: feature width mismatch " + train_emb.shape_str() + " vs " +
                             test_emb.shape_str());
    }
    const int p = infer_classes(train_labels, num_classes);

    std::vector<std::size_t> count(p, 0);
    for (int l : train_labels) count[l]++;
    for (int c = 0; c < p; ++c) {
        if (count[c] == 0) {
            throw ConfigError("gnb: class " + std::to_string(c) + " has no training samples");
        }
    }

    Matrix mean(p, n), var(p, n);
    for (std::size_t i = 0; i < m; ++i) {
        const int c = train_labels[i];
        const auto row = train_emb.row(i);
        for (std::size_t f = 0; f < n; ++f) mean(c, f) += row[f];
    }
    for (int c = 0; c < p; ++c) {
        for (std::size_t f = 0; f < n; ++f) mean(c, f) /= static_cast<double>(count[c]);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const int c = train_labels[i];
        const auto row = train_emb.row(i);
        for (std::size_t f = 0; f < n; ++f) {
            const double d = row[f] - mean(c, f);
            var(c, f) += d * d;
        }
    }
    for (int c = 0; c < p; ++c) {
        for (std::size_t f = 0; f < n; ++f) var(c, f) /= static_cast<double>(count[c]);
    }

    // Variance floor: 1e-9 of the largest overall feature variance.
    double max_feature_var = 0.0;
    for (std::size_t f = 0; f < n; ++f) {
        double fm = 0.0, fv = 0.0;
        for (std::size_t i = 0; i < m; ++i) fm += train_emb(i, f);
        fm /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double d = train_emb(i, f) - fm;
            fv += d * d;
        }
        max_feature_var = std::max(max_feature_var, fv / static_cast<double>(m));
    }
    double floor = 1e-9 * max_feature_var;
    if (floor <= 0.0) floor = 1e-12;
    for (double& v : var.values()) v = std::max(v, floor);

    std::vector<double> log_prior(p);
    for (int c = 0; c < p; ++c) {
        log_prior[c] = std::log(static_cast<double>(count[c]) / static_cast<double>(m));
    }

    constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
    ClassifierOutput out;
    out.predicted.resize(test_emb.rows());
    out.scores = Matrix(test_emb.rows(), p);
    std::vector<double> log_post(p);
    for (std::size_t t = 0; t < test_emb.rows(); ++t) {
        const auto x = test_emb.row(t);
        for (int c = 0; c < p; ++c) {
            double acc = log_prior[c];
            for (std::size_t f = 0; f < n; ++f) {
                const double v = var(c, f);
                const double d = x[f] - mean(c, f);
                acc += -0.5 * (kLogTwoPi + std::log(v)) - d * d / (2.0 * v);
            }
            log_post[c] = acc;
        }
        const double peak = *std::max_element(log_post.begin(), log_post.end());
        double z = 0.0;
        for (int c = 0; c < p; ++c) z += std::exp(log_post[c] - peak);
        int best = 0;
        for (int c = 0; c < p; ++c) {
            out.scores(t, c) = std::exp(log_post[c] - peak) / z;
            if (log_post[c] > log_post[best]) best = c;
        }
        out.predicted[t] = best;
    }
    return out;
}

ClassificationReport classification_metrics(const std::vector<int>& truth,
                                            const std::vector<int>& predicted,
                                            const Matrix& scores) {
    if (truth.size() != predicted.size() || truth.size() != scores.rows()) {
        throw DimensionError("metrics: truth/prediction/score row counts disagree");
    }
    if (truth.empty()) throw ConfigError("metrics: empty evaluation set");
    const int p = static_cast<int>(scores.cols());

    ClassificationReport report;
    std::vector<std::size_t> tp(p, 0), fp(p, 0), fn(p, 0), support(p, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= p || predicted[i] < 0 || predicted[i] >= p) {
            throw ConfigError("metrics: label outside score columns at row " + std::to_string(i));
        }
        support[truth[i]]++;
        if (truth[i] == predicted[i]) {
            ++correct;
            tp[truth[i]]++;
        } else {
            fp[predicted[i]]++;
            fn[truth[i]]++;
        }
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

    double precision_sum = 0.0, recall_sum = 0.0, f1_sum = 0.0, jaccard_sum = 0.0;
    for (int c = 0; c < p; ++c) {
        const double tpc = static_cast<double>(tp[c]);
        const double denom_p = tpc + static_cast<double>(fp[c]);
        const double denom_r = tpc + static_cast<double>(fn[c]);
        const double denom_j = tpc + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
        double prec = 0.0, rec = 0.0;
        if (denom_p > 0.0) {
            prec = tpc / denom_p;
        } else {
            report.notes.push_back("precision 0/0 for class " + std::to_string(c) +
                                   " (never predicted), counted as 0");
        }
        if (denom_r > 0.0) rec = tpc / denom_r;
        precision_sum += prec;
        recall_sum += rec;
        f1_sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        jaccard_sum += denom_j > 0.0 ? tpc / denom_j : 0.0;
    }
    report.precision = precision_sum / p;
    report.recall = recall_sum / p;
    report.f1 = f1_sum / p;
    report.jaccard = jaccard_sum / p;

    // Macro one-vs-rest ROC AUC via the rank statistic; classes absent from the
    // truth (or lacking negatives) are skipped and the average renormalized.
    double auc_sum = 0.0;
    int auc_classes = 0;
    std::vector<std::pair<double, int>> order(truth.size());
    for (int c = 0; c < p; ++c) {
        const std::size_t pos = support[c];
        const std::size_t neg = truth.size() - pos;
        if (pos == 0 || neg == 0) {
            report.notes.push_back("roc_auc skipped for class " + std::to_string(c) +
                                   (pos == 0 ? " (absent from truth)" : " (no negatives)"));
            continue;
        }
        for (std::size_t i = 0; i < truth.size(); ++i) {
            order[i] = {scores(i, c), static_cast<int>(i)};
        }
        std::sort(order.begin(), order.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        // average ranks over tied scores
        double rank_sum_pos = 0.0;
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() && order[j + 1].first == order[i].first) ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
            for (std::size_t t = i; t <= j; ++t) {
                if (truth[order[t].second] == c) rank_sum_pos += avg_rank;
            }
            i = j + 1;
        }
        const double auc =
            (rank_sum_pos - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1.0)) /
            (static_cast<double>(pos) * static_cast<double>(neg));
        auc_sum += auc;
        ++auc_classes;
    }
    report.roc_auc = auc_classes > 0 ? auc_sum / auc_classes : 0.0;
    return report;
}

}  // namespace meud
