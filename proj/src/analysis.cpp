#include "latentdrive/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::analysis {

namespace {

double sq_dist(std::span<const float> p, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double d = p[i] - c[i];
        s += d * d;
    }
    return s;
}

bool has_k_distinct(const Matrix& points, int k) {
    std::set<std::vector<float>> seen;
    for (int i = 0; i < points.rows && static_cast<int>(seen.size()) < k; ++i) {
        auto r = points.row(i);
        seen.emplace(r.begin(), r.end());
    }
    return static_cast<int>(seen.size()) >= k;
}

} // namespace

int ClusterModel::assign(std::span<const float> point) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        const double d = sq_dist(point, centers[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

ClusterModel kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter) {
    if (k < 2) throw ConfigError("k-means needs k >= 2");
    if (max_iter <= 0) throw ConfigError("max_iter must be positive");
    if (!has_k_distinct(points, k))
        throw ConfigError("k-means needs at least " + std::to_string(k) + " distinct points");

    const int n = points.rows;
    ClusterModel model;
    model.k = k;
    model.dim = points.cols;
    Rng rng = make_rng(seed, {0x6b6d});

    // k-means++ seeding.
    auto first = points.row(static_cast<int>(uniform01(rng) * n));
    model.centers.emplace_back(first.begin(), first.end());
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) d2[i] = sq_dist(points.row(i), model.centers[0]);
    while (static_cast<int>(model.centers.size()) < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        double target = uniform01(rng) * total;
        int pick = n - 1;
        for (int i = 0; i < n; ++i) {
            if (d2[i] <= 0.0) continue;
            target -= d2[i];
            if (target < 0.0) {
                pick = i;
                break;
            }
        }
        while (d2[pick] <= 0.0) --pick;  // rounding at the tail
        auto p = points.row(pick);
        model.centers.emplace_back(p.begin(), p.end());
        for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points.row(i), model.centers.back()));
    }

    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            const int c = model.assign(points.row(i));
            inertia += sq_dist(points.row(i), model.centers[c]);
            if (c != assignment[i]) {
                assignment[i] = c;
                changed = true;
            }
        }
        model.inertia = inertia;
        model.inertia_history.push_back(inertia);
        model.iterations = iter + 1;
        if (!changed) break;

        std::vector<std::vector<double>> sums(k, std::vector<double>(model.dim, 0.0));
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            auto p = points.row(i);
            auto& s = sums[assignment[i]];
            for (int d = 0; d < model.dim; ++d) s[d] += p[d];
            ++counts[assignment[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its center
            for (int d = 0; d < model.dim; ++d) model.centers[c][d] = sums[c][d] / counts[c];
        }
    }
    return model;
}

std::vector<double> project(std::span<const float> feature, const ClusterModel& model) {
    if (static_cast<int>(feature.size()) != model.dim) throw DimensionError("feature dimension does not match cluster model");
    std::vector<double> out(static_cast<std::size_t>(model.k));
    for (int c = 0; c < model.k; ++c) out[c] = std::sqrt(sq_dist(feature, model.centers[c]));
    return out;
}

std::vector<double> project_map(const FeatureMap& map, const ClusterModel& model) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(map.cells()) * model.k);
    for (int j = 0; j < map.cells(); ++j) {
        const auto p = project(map.cell(j), model);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

Matrix stack_cells(std::span<const FeatureMap> maps) {
    if (maps.empty()) return {};
    int rows = 0;
    for (const auto& m : maps) {
        if (m.dim != maps.front().dim) throw DimensionError("feature maps differ in dimension");
        rows += m.cells();
    }
    Matrix out(rows, maps.front().dim);
    auto it = out.data.begin();
    for (const auto& m : maps) it = std::copy(m.data.begin(), m.data.end(), it);
    return out;
}

std::vector<double> LinearClassifier::scores(std::span<const double> x) const {
    std::vector<double> out(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c)
        out[c] = std::inner_product(x.begin(), x.end(), weights[c].begin(), bias[c]);
    return out;
}

int LinearClassifier::predict(std::span<const double> x) const {
    const auto s = scores(x);
    return classes[static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin())];
}

LinearClassifier train_linear_svc(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                  const SvcConfig& config) {
    if (x.size() != y.size()) throw DimensionError("sample and label counts differ");
    if (x.empty()) throw ConfigError("linear SVC needs samples");
    if (!(config.lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (config.epochs <= 0) throw ConfigError("epochs must be positive");
    const std::size_t dim = x.front().size();
    for (const auto& row : x)
        if (row.size() != dim) throw DimensionError("samples differ in length");

    LinearClassifier clf;
    const std::set<int> labels(y.begin(), y.end());
    clf.classes.assign(labels.begin(), labels.end());
    if (clf.classes.size() < 2) throw ConfigError("linear SVC needs at least two classes");
    clf.weights.assign(clf.classes.size(), std::vector<double>(dim, 0.0));
    clf.bias.assign(clf.classes.size(), 0.0);

    const std::size_t n = x.size();
    const double lambda = config.lambda;
    // offset keeps the first steps near 1 instead of 1/lambda; the bias is unregularised
    // and would otherwise absorb a huge early jump
    const double t0 = 1.0 / lambda;
    auto step_size = [&](long t) {
        return config.fixed_step > 0.0 ? config.fixed_step : 1.0 / (lambda * (static_cast<double>(t) + t0));
    };

    for (std::size_t c = 0; c < clf.classes.size(); ++c) {
        auto& w = clf.weights[c];
        double& b = clf.bias[c];
        auto sign = [&](std::size_t i) { return y[i] == clf.classes[c] ? 1.0 : -1.0; };
        long t = 0;
        if (config.full_batch) {
            std::vector<double> g(dim);
            for (int e = 0; e < config.epochs; ++e) {
                const double eta = step_size(++t);
                std::fill(g.begin(), g.end(), 0.0);
                double gb = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double yi = sign(i);
                    const double margin = yi * (std::inner_product(x[i].begin(), x[i].end(), w.begin(), b));
                    if (margin < 1.0) {
                        for (std::size_t d = 0; d < dim; ++d) g[d] += yi * x[i][d];
                        gb += yi;
                    }
                }
                for (std::size_t d = 0; d < dim; ++d) w[d] = (1.0 - eta * lambda) * w[d] + eta * g[d] / n;
                b += eta * gb / n;
            }
            continue;
        }
        Rng rng = make_rng(config.seed, {0x737663, c});
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (int e = 0; e < config.epochs; ++e) {
            for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * i)]);
            for (std::size_t i : order) {
                const double eta = step_size(++t);
                const double yi = sign(i);
                const double margin = yi * (std::inner_product(x[i].begin(), x[i].end(), w.begin(), b));
                const double shrink = 1.0 - eta * lambda;
                for (auto& v : w) v *= shrink;
                if (margin < 1.0) {
                    for (std::size_t d = 0; d < dim; ++d) w[d] += eta * yi * x[i][d];
                    b += eta * yi;
                }
            }
        }
    }
    return clf;
}

double svc_objective(const LinearClassifier& clf, const std::vector<std::vector<double>>& x,
                     const std::vector<int>& y, double lambda) {
    double total = 0.0;
    for (std::size_t c = 0; c < clf.classes.size(); ++c) {
        double hinge = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double yi = y[i] == clf.classes[c] ? 1.0 : -1.0;
            const double s = std::inner_product(x[i].begin(), x[i].end(), clf.weights[c].begin(), clf.bias[c]);
            hinge += std::max(0.0, 1.0 - yi * s);
        }
        const double norm2 = std::inner_product(clf.weights[c].begin(), clf.weights[c].end(), clf.weights[c].begin(), 0.0);
        total += 0.5 * lambda * norm2 + hinge / static_cast<double>(x.size());
    }
    return total / static_cast<double>(clf.classes.size());
}

double accuracy(const LinearClassifier& clf, const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
    if (x.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < x.size(); ++i) hits += clf.predict(x[i]) == y[i];
    return static_cast<double>(hits) / static_cast<double>(x.size());
}

std::vector<double> coefficient_map(const LinearClassifier& clf, int rows, int cols, int class_index, int cluster,
                                    int k) {
    if (class_index < 0 || class_index >= static_cast<int>(clf.classes.size()))
        throw IndexError("class index " + std::to_string(class_index) + " out of range");
    if (cluster < 0 || cluster >= k) throw IndexError("cluster index " + std::to_string(cluster) + " out of range");
    if (rows * cols * k != clf.features()) throw DimensionError("grid and cluster count do not match classifier width");
    std::vector<double> map(static_cast<std::size_t>(rows) * cols);
    const auto& w = clf.weights[class_index];
    for (int j = 0; j < rows * cols; ++j) map[j] = w[static_cast<std::size_t>(j) * k + cluster];
    return map;
}

std::vector<concepts::MatchResult> anchor_clusters(const ClusterModel& model, const concepts::ConceptBank& bank) {
    if (model.dim != bank.dim()) throw DimensionError("cluster and bank dimensions differ");
    std::vector<concepts::MatchResult> out;
    for (int c = 0; c < model.k; ++c) {
        const std::vector<float> center(model.centers[c].begin(), model.centers[c].end());
        auto m = concepts::match_any(center, bank, concepts::Similarity::cosine);
        m.cell = c;
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace ld::analysis
