#pragma once

// Control head: a two-layer perceptron over the flattened feature map,
// trained by behavior cloning with Adam.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "latentdrive/archive.hpp"
#include "latentdrive/control.hpp"
#include "latentdrive/feature_map.hpp"

namespace ld::policy {

struct PolicyShape {
    int rows = 8;
    int cols = 6;
    int dim = 32;
    int hidden = 32;
    bool linear = false;  // identity instead of tanh
    double max_steering = 0.5;

    int inputs() const { return rows * cols * dim; }
    bool operator==(const PolicyShape&) const = default;
};

/// Flat parameter vector: w1 [hidden][inputs], b1 [hidden], w2 [2][hidden], b2 [2].
struct PolicyParams {
    PolicyShape shape;
    std::vector<double> values;

    static PolicyParams zeros(const PolicyShape& shape);
    /// w1, w2 uniform in ±1/√fan_in; biases zero.
    static PolicyParams random(const PolicyShape& shape, std::uint64_t seed);

    std::size_t w1_offset() const { return 0; }
    std::size_t b1_offset() const { return static_cast<std::size_t>(shape.hidden) * shape.inputs(); }
    std::size_t w2_offset() const { return b1_offset() + shape.hidden; }
    std::size_t b2_offset() const { return w2_offset() + 2 * static_cast<std::size_t>(shape.hidden); }
    std::size_t size() const { return b2_offset() + 2; }
};

/// Raw (unclamped) network outputs.
struct PolicyOutput {
    double steering = 0.0;
    double acceleration = 0.0;
};

PolicyOutput policy_raw(const PolicyParams& params, const FeatureMap& features);

/// Clamped steering; acceleration fixed to 0 (fixed-speed driving).
Control policy_forward(const PolicyParams& params, const FeatureMap& features);

/// Squared steering error.
double loss(const Control& predicted, const Control& teacher);

/// Gradient of (raw steering − target)² scaled by `weight`, accumulated into `grad`.
/// Returns the unweighted loss.
double accumulate_gradient(const PolicyParams& params, const FeatureMap& features, double target, double weight,
                           std::span<double> grad);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

/// One Adam update with bias correction. Uses state.step + 1 as t. Throws
/// TrainingError if any gradient is non-finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config);

/// Reduce-on-plateau learning-rate schedule on the epoch loss.
struct PlateauScheduler {
    double factor = 1.0;
    int patience = 10;
    double threshold = 1e-4;  // relative improvement that resets patience

    double best = 0.0;
    int bad_epochs = 0;
    bool started = false;

    /// Returns the learning rate to use for the next epoch.
    double update(double epoch_loss, double lr);
};

struct TrainRecord {
    FeatureMap features;
    Control teacher;
    Maneuver label = Maneuver::lane_stable;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    std::uint64_t seed = 0;
    PolicyShape shape;
    AdamConfig adam;
    double plateau_factor = 1.0;
    int plateau_patience = 10;
};

struct TrainResult {
    PolicyParams params;
    std::vector<double> loss_curve;  // one mean training loss per epoch
    std::vector<double> lr_curve;
};

/// Mini-batch behavior cloning. Throws ConfigError on an empty dataset.
TrainResult train(std::span<const TrainRecord> dataset, const TrainConfig& config);
TrainResult train(std::span<const TrainRecord> dataset, const TrainConfig& config, PolicyParams initial);

double dataset_loss(const PolicyParams& params, std::span<const TrainRecord> dataset);

/// Max relative error between backprop and central differences over `samples`
/// randomly chosen parameters.
double finite_diff_check(const PolicyParams& params, const FeatureMap& features, double target, double h = 1e-4,
                         int samples = 50, std::uint64_t seed = 0);

/// Tensor archive with tensors w1, b1, w2, b2 and metadata "hidden_dim", "grid", "feature_dim".
Archive to_archive(const PolicyParams& params);
PolicyParams from_archive(const Archive& archive);
void save_policy(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_policy(const std::filesystem::path& path);

} // namespace ld::policy
