#include "latentdrive/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld {

std::string to_string(Maneuver m) {
    switch (m) {
    case Maneuver::lane_stable: return "lane_stable";
    case Maneuver::avoidance: return "avoidance";
    case Maneuver::recovery: return "recovery";
    }
    return "unknown";
}

Maneuver parse_maneuver(std::string_view name) {
    if (name == "lane_stable") return Maneuver::lane_stable;
    if (name == "avoidance") return Maneuver::avoidance;
    if (name == "recovery") return Maneuver::recovery;
    throw ConfigError("unknown maneuver '" + std::string(name) + "'");
}

} // namespace ld

namespace ld::policy {

PolicyParams PolicyParams::zeros(const PolicyShape& shape) {
    if (shape.rows <= 0 || shape.cols <= 0 || shape.dim <= 0 || shape.hidden <= 0)
        throw ConfigError("policy shape must be positive in every dimension");
    PolicyParams p{shape, {}};
    p.values.assign(p.size(), 0.0);
    return p;
}

PolicyParams PolicyParams::random(const PolicyShape& shape, std::uint64_t seed) {
    PolicyParams p = zeros(shape);
    Rng rng = make_rng(seed, {0x706f6c});
    const double b1 = 1.0 / std::sqrt(static_cast<double>(shape.inputs()));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
    for (std::size_t i = p.w1_offset(); i < p.b1_offset(); ++i) p.values[i] = (2.0 * uniform01(rng) - 1.0) * b1;
    for (std::size_t i = p.w2_offset(); i < p.b2_offset(); ++i) p.values[i] = (2.0 * uniform01(rng) - 1.0) * b2;
    return p;
}

namespace {

void check_shape(const PolicyParams& params, const FeatureMap& features) {
    const auto& s = params.shape;
    if (features.rows != s.rows || features.cols != s.cols || features.dim != s.dim)
        throw DimensionError("feature map " + std::to_string(features.rows) + "x" + std::to_string(features.cols) + "x" +
                             std::to_string(features.dim) + " does not match policy input " + std::to_string(s.rows) +
                             "x" + std::to_string(s.cols) + "x" + std::to_string(s.dim));
    if (params.values.size() != params.size()) throw DimensionError("policy parameter vector has wrong length");
}

// Hidden activations and raw outputs.
PolicyOutput run(const PolicyParams& params, const FeatureMap& features, std::vector<double>& hidden) {
    check_shape(params, features);
    const auto& s = params.shape;
    const int n = s.inputs();
    const double* w1 = params.values.data() + params.w1_offset();
    const double* b1 = params.values.data() + params.b1_offset();
    const double* w2 = params.values.data() + params.w2_offset();
    const double* b2 = params.values.data() + params.b2_offset();
    const float* x = features.data.data();
    hidden.resize(static_cast<std::size_t>(s.hidden));
    for (int h = 0; h < s.hidden; ++h) {
        const double* row = w1 + static_cast<std::size_t>(h) * n;
        double z = b1[h];
        for (int i = 0; i < n; ++i) z += row[i] * x[i];
        hidden[h] = s.linear ? z : std::tanh(z);
    }
    PolicyOutput out{b2[0], b2[1]};
    for (int h = 0; h < s.hidden; ++h) {
        out.steering += w2[h] * hidden[h];
        out.acceleration += w2[s.hidden + h] * hidden[h];
    }
    return out;
}

} // namespace

PolicyOutput policy_raw(const PolicyParams& params, const FeatureMap& features) {
    std::vector<double> hidden;
    return run(params, features, hidden);
}

Control policy_forward(const PolicyParams& params, const FeatureMap& features) {
    const auto raw = policy_raw(params, features);
    const double s = params.shape.max_steering;
    return {std::clamp(raw.steering, -s, s), 0.0};
}

double loss(const Control& predicted, const Control& teacher) {
    const double e = predicted.steering - teacher.steering;
    return e * e;
}

double accumulate_gradient(const PolicyParams& params, const FeatureMap& features, double target, double weight,
                           std::span<double> grad) {
    if (grad.size() != params.size()) throw DimensionError("gradient buffer has wrong length");
    std::vector<double> hidden;
    const auto out = run(params, features, hidden);
    const auto& s = params.shape;
    const int n = s.inputs();
    const double err = out.steering - target;
    const double g = 2.0 * err * weight;

    double* gw1 = grad.data() + params.w1_offset();
    double* gb1 = grad.data() + params.b1_offset();
    double* gw2 = grad.data() + params.w2_offset();
    double* gb2 = grad.data() + params.b2_offset();
    const double* w2 = params.values.data() + params.w2_offset();
    const float* x = features.data.data();

    gb2[0] += g;
    for (int h = 0; h < s.hidden; ++h) {
        gw2[h] += g * hidden[h];
        const double delta = g * w2[h] * (s.linear ? 1.0 : 1.0 - hidden[h] * hidden[h]);
        if (delta == 0.0) continue;
        gb1[h] += delta;
        double* row = gw1 + static_cast<std::size_t>(h) * n;
        for (int i = 0; i < n; ++i) row[i] += delta * x[i];
    }
    return err * err;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config) {
    if (params.size() != grads.size()) throw DimensionError("adam: parameter and gradient lengths differ");
    for (double g : grads)
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient");
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    const long t = ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
}

double PlateauScheduler::update(double epoch_loss, double lr) {
    if (!started || epoch_loss < best * (1.0 - threshold)) {
        best = epoch_loss;
        bad_epochs = 0;
        started = true;
        return lr;
    }
    if (++bad_epochs > patience) {
        bad_epochs = 0;
        return lr * factor;
    }
    return lr;
}

double dataset_loss(const PolicyParams& params, std::span<const TrainRecord> dataset) {
    if (dataset.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : dataset) {
        const double e = policy_raw(params, r.features).steering - r.teacher.steering;
        total += e * e;
    }
    return total / static_cast<double>(dataset.size());
}

TrainResult train(std::span<const TrainRecord> dataset, const TrainConfig& config) {
    return train(dataset, config, PolicyParams::random(config.shape, config.seed));
}

TrainResult train(std::span<const TrainRecord> dataset, const TrainConfig& config, PolicyParams initial) {
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    if (config.batch_size <= 0) throw ConfigError("batch size must be positive");
    if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
    TrainResult result{std::move(initial), {}, {}};
    auto& params = result.params;
    AdamState state;
    AdamConfig adam = config.adam;
    PlateauScheduler plateau{config.plateau_factor, config.plateau_patience};

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad(params.size());

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng = make_rng(config.seed, {0x747261696e, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double weight = 1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const auto& r = dataset[order[b]];
                epoch_loss += accumulate_gradient(params, r.features, r.teacher.steering, weight, grad);
            }
            adam_step(params.values, grad, state, adam);
        }
        epoch_loss /= static_cast<double>(order.size());
        result.loss_curve.push_back(epoch_loss);
        result.lr_curve.push_back(adam.lr);
        adam.lr = plateau.update(epoch_loss, adam.lr);
    }
    return result;
}

double finite_diff_check(const PolicyParams& params, const FeatureMap& features, double target, double h, int samples,
                         std::uint64_t seed) {
    std::vector<double> grad(params.size(), 0.0);
    accumulate_gradient(params, features, target, 1.0, grad);

    auto objective = [&](const PolicyParams& p) {
        const double e = policy_raw(p, features).steering - target;
        return e * e;
    };

    Rng rng = make_rng(seed, {0x6664});
    std::vector<std::size_t> indices(params.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(std::min<std::size_t>(indices.size(), static_cast<std::size_t>(samples)));

    PolicyParams probe = params;
    double worst = 0.0;
    for (std::size_t i : indices) {
        const double saved = probe.values[i];
        probe.values[i] = saved + h;
        const double up = objective(probe);
        probe.values[i] = saved - h;
        const double down = objective(probe);
        probe.values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
        worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
    }
    return worst;
}

// ---------------------------------------------------------------------------

namespace {

NamedTensor slice(const PolicyParams& p, std::size_t begin, std::size_t end, std::vector<std::int64_t> shape) {
    NamedTensor t{std::move(shape), {}};
    t.data.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) t.data.push_back(static_cast<float>(p.values[i]));
    return t;
}

void unslice(PolicyParams& p, const Archive& a, const std::string& name, std::size_t begin, std::size_t end) {
    const auto& t = a.at(name);
    if (t.data.size() != end - begin) throw LoadError("tensor '" + name + "': size does not match policy shape");
    for (std::size_t i = begin; i < end; ++i) p.values[i] = t.data[i - begin];
}

} // namespace

Archive to_archive(const PolicyParams& p) {
    const auto& s = p.shape;
    Archive a;
    a.metadata = {{"kind", "policy"},
                  {"hidden_dim", s.hidden},
                  {"grid", {s.rows, s.cols}},
                  {"feature_dim", s.dim},
                  {"linear", s.linear},
                  {"max_steering", s.max_steering}};
    a.tensors["w1"] = slice(p, p.w1_offset(), p.b1_offset(), {s.hidden, s.inputs()});
    a.tensors["b1"] = slice(p, p.b1_offset(), p.w2_offset(), {s.hidden});
    a.tensors["w2"] = slice(p, p.w2_offset(), p.b2_offset(), {2, s.hidden});
    a.tensors["b2"] = slice(p, p.b2_offset(), p.size(), {2});
    return a;
}

PolicyParams from_archive(const Archive& a) {
    PolicyShape s;
    try {
        const auto& m = a.metadata;
        s.hidden = m.at("hidden_dim").get<int>();
        s.rows = m.at("grid").at(0).get<int>();
        s.cols = m.at("grid").at(1).get<int>();
        s.dim = m.at("feature_dim").get<int>();
        s.linear = m.value("linear", false);
        s.max_steering = m.value("max_steering", 0.5);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("policy archive metadata incomplete: ") + e.what());
    }
    PolicyParams p = PolicyParams::zeros(s);
    unslice(p, a, "w1", p.w1_offset(), p.b1_offset());
    unslice(p, a, "b1", p.b1_offset(), p.w2_offset());
    unslice(p, a, "w2", p.w2_offset(), p.b2_offset());
    unslice(p, a, "b2", p.b2_offset(), p.size());
    return p;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params) { write_archive(path, to_archive(params)); }

PolicyParams load_policy(const std::filesystem::path& path) { return from_archive(read_archive(path)); }

} // namespace ld::policy
