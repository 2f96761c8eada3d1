#pragma once

#include <string>
#include <vector>

#include "meud/matrix.hpp"

namespace meud {

/// Neighborhood bookkeeping shared by the trustworthiness score: original-space
/// ranks (1..m-1 per row, ties broken by ascending sample index) and the k-NN
/// index sets in both spaces.
struct NeighborRanks {
    std::vector<std::vector<int>> rank_in_original;  // [i][j], 0 on the diagonal
    std::vector<std::vector<int>> knn_original;
    std::vector<std::vector<int>> knn_embedded;
};

NeighborRanks compute_neighbor_ranks(const Matrix& original, const Matrix& embedded, int k);

/// T(k) = 1 - 2/(m k (2m - 3k - 1)) * sum over embedded-space neighbors that
/// were not original-space neighbors of (rank - k). 1.0 means every embedded
/// neighborhood was already a neighborhood in the original space.
double trustworthiness(const Matrix& original, const Matrix& embedded, int k);

struct ClassifierOutput {
    std::vector<int> predicted;
    Matrix scores;  // row-stochastic, one column per class
};

/// Majority vote over the k nearest training rows (Euclidean). Distance ties
/// prefer the smaller sample index, vote ties the smaller class index. Scores
/// are vote fractions.
ClassifierOutput knn_classify(const Matrix& train_emb, const std::vector<int>& train_labels,
                              const Matrix& test_emb, int k, int num_classes = 0);

/// Per-class per-feature Gaussians with a variance floor of 1e-9 times the
/// largest feature variance; posteriors computed in log space.
ClassifierOutput gnb_fit_predict(const Matrix& train_emb, const std::vector<int>& train_labels,
                                 const Matrix& test_emb, int num_classes = 0);

struct ClassificationReport {
    double accuracy = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double f1 = 0.0;         // macro
    double jaccard = 0.0;    // macro
    double roc_auc = 0.0;    // macro one-vs-rest
    std::vector<std::string> notes;  // 0/0 conventions that fired
};

ClassificationReport classification_metrics(const std::vector<int>& truth,
                                            const std::vector<int>& predicted,
                                            const Matrix& scores);

}  // namespace meud
