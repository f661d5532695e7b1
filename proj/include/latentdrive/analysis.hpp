#pragma once

// Inspection pipeline: k-means over patch features, distance projection,
// one-vs-rest linear SVM over the projected grid, and coefficient maps.

#include <cstdint>
#include <span>
#include <vector>

#include "latentdrive/concept_space.hpp"
#include "latentdrive/feature_map.hpp"
#include "latentdrive/matrix.hpp"

namespace ld::analysis {

struct ClusterModel {
    int k = 0;
    int dim = 0;
    std::vector<std::vector<double>> centers;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // after each assignment step
    int iterations = 0;

    int assign(std::span<const float> point) const;
};

/// Lloyd's algorithm with k-means++ seeding. Points are matrix rows. Stops when
/// assignments repeat or after max_iter rounds. Throws ConfigError when fewer
/// than k distinct points exist.
ClusterModel kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter = 100);

/// Component c = Euclidean distance to center c.
std::vector<double> project(std::span<const float> feature, const ClusterModel& model);

/// Concatenated projections of every cell: index j·k + c.
std::vector<double> project_map(const FeatureMap& map, const ClusterModel& model);

/// Rows of every cell of every map.
Matrix stack_cells(std::span<const FeatureMap> maps);

struct SvcConfig {
    double lambda = 1e-2;
    int epochs = 30;
    std::uint64_t seed = 0;
    bool full_batch = false;
    /// > 0: constant step; otherwise 1/(λ·t).
    double fixed_step = 0.0;
};

struct LinearClassifier {
    std::vector<int> classes;                // sorted label values
    std::vector<std::vector<double>> weights;  // [class][feature]
    std::vector<double> bias;

    int features() const { return weights.empty() ? 0 : static_cast<int>(weights.front().size()); }
    std::vector<double> scores(std::span<const double> x) const;
    int predict(std::span<const double> x) const;
};

/// One-vs-rest hinge loss with L2 penalty on the weights, trained by
/// subgradient descent. Throws ConfigError when y holds a single class.
LinearClassifier train_linear_svc(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                  const SvcConfig& config = {});

/// Mean over classes of λ/2·|w|² + mean hinge loss.
double svc_objective(const LinearClassifier& clf, const std::vector<std::vector<double>>& x,
                     const std::vector<int>& y, double lambda);

double accuracy(const LinearClassifier& clf, const std::vector<std::vector<double>>& x, const std::vector<int>& y);

/// Weights of `class_index` for cluster dimension `cluster` laid on the
/// rows×cols patch grid (row-stacked).
std::vector<double> coefficient_map(const LinearClassifier& clf, int rows, int cols, int class_index, int cluster,
                                    int k);

/// Each center's best match over the whole bank (cosine).
std::vector<concepts::MatchResult> anchor_clusters(const ClusterModel& model, const concepts::ConceptBank& bank);

} // namespace ld::analysis
