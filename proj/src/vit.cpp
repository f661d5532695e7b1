#include "latentdrive/vit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::vit {

void Image::validate() const {
    if (height <= 0 || width <= 0) throw ValidationError("image has empty extent");
    if (data.size() != static_cast<std::size_t>(height) * width * 3)
        throw ValidationError("image buffer does not match H×W×3");
    for (float v : data)
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw ValidationError("image values must lie in [0,1]");
}

PatchGrid make_grid(int height, int width, int patch_size, int stride) {
    if (patch_size <= 0 || stride <= 0) throw ConfigError("patch size and stride must be positive");
    if (patch_size > height || patch_size > width)
        throw DimensionError("patch size " + std::to_string(patch_size) + " exceeds image extent " +
                             std::to_string(height) + "x" + std::to_string(width));
    if (stride > patch_size) throw ConfigError("stride must not exceed patch size");
    return {(height - patch_size) / stride + 1, (width - patch_size) / stride + 1, patch_size, stride};
}

Patches patchify(const Image& image, int patch_size, int stride) {
    Patches out;
    out.grid = make_grid(image.height, image.width, patch_size, stride);
    const int token_dim = patch_size * patch_size * 3;
    out.tokens = Matrix(out.grid.size(), token_dim);
    for (int i = 0; i < out.grid.size(); ++i) {
        const auto [gx, gy] = out.grid.coord(i);
        auto token = out.tokens.row(i);
        int t = 0;
        for (int py = 0; py < patch_size; ++py)
            for (int px = 0; px < patch_size; ++px)
                for (int c = 0; c < 3; ++c) token[t++] = image.at(gy * stride + py, gx * stride + px, c);
    }
    return out;
}

namespace {

// Align-corners sample position of target index t in a base axis of n0 points.
double axis_position(int t, int n, int n0) {
    if (n == 1) return 0.5 * (n0 - 1);
    return static_cast<double>(t) * (n0 - 1) / (n - 1);
}

} // namespace

Matrix interp_pos_encoding(const Matrix& base, int base_rows, int base_cols, int rows, int cols) {
    if (base_rows < 2 || base_cols < 2)
        throw ConfigError("positional base grid must have at least 2 rows and 2 columns");
    if (base.rows != base_rows * base_cols) throw DimensionError("positional table does not match base grid");
    if (rows <= 0 || cols <= 0) throw ConfigError("target grid must be non-empty");
    if (rows == base_rows && cols == base_cols) return base;

    const int dim = base.cols;
    Matrix out(rows * cols, dim);
    for (int r = 0; r < rows; ++r) {
        const double u = axis_position(r, rows, base_rows);
        const int r0 = std::min(static_cast<int>(std::floor(u)), base_rows - 2);
        const double fu = u - r0;
        for (int c = 0; c < cols; ++c) {
            const double v = axis_position(c, cols, base_cols);
            const int c0 = std::min(static_cast<int>(std::floor(v)), base_cols - 2);
            const double fv = v - c0;
            const auto p00 = base.row(r0 * base_cols + c0);
            const auto p01 = base.row(r0 * base_cols + c0 + 1);
            const auto p10 = base.row((r0 + 1) * base_cols + c0);
            const auto p11 = base.row((r0 + 1) * base_cols + c0 + 1);
            auto dst = out.row(r * cols + c);
            for (int d = 0; d < dim; ++d) {
                const double top = (1 - fv) * p00[d] + fv * p01[d];
                const double bottom = (1 - fv) * p10[d] + fv * p11[d];
                dst[d] = static_cast<float>((1 - fu) * top + fu * bottom);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weights

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError("encoder weights: " + what);
}

void require_finite(std::span<const float> values, const std::string& what) {
    for (float v : values)
        if (!std::isfinite(v)) throw ValidationError("encoder weights: non-finite value in " + what);
}

void require_shape(const Matrix& m, int rows, int cols, const std::string& what) {
    require(m.rows == rows && m.cols == cols && m.data.size() == static_cast<std::size_t>(rows) * cols,
            what + " has shape " + std::to_string(m.rows) + "x" + std::to_string(m.cols) + ", expected " +
                std::to_string(rows) + "x" + std::to_string(cols));
    require_finite(m.data, what);
}

void require_len(std::span<const float> v, int n, const std::string& what) {
    require(static_cast<int>(v.size()) == n, what + " has length " + std::to_string(v.size()));
    require_finite(v, what);
}

} // namespace

void EncoderWeights::validate() const {
    const auto& c = config;
    require(c.dim > 0 && c.key_dim > 0 && c.mlp_dim > 0 && c.layers >= 1 && c.patch_size > 0, "invalid config");
    require(c.key_dim <= c.dim, "key dimension exceeds model dimension");
    require(c.base_rows >= 2 && c.base_cols >= 2, "positional base grid must be at least 2x2");
    require_shape(patch_embed, c.patch_size * c.patch_size * 3, c.dim, "patch_embed");
    require_len(patch_bias, c.dim, "patch_bias");
    require_shape(pos_table, c.base_rows * c.base_cols, c.dim, "pos_table");
    require(static_cast<int>(layers.size()) == c.layers, "layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& w = layers[l];
        const auto p = "layer" + std::to_string(l + 1) + ".";
        require_len(w.ln1_gamma, c.dim, p + "ln1_gamma");
        require_len(w.ln1_beta, c.dim, p + "ln1_beta");
        require_shape(w.wq, c.dim, c.key_dim, p + "wq");
        require_shape(w.wk, c.dim, c.key_dim, p + "wk");
        require_shape(w.wv, c.dim, c.dim, p + "wv");
        require_len(w.ln2_gamma, c.dim, p + "ln2_gamma");
        require_len(w.ln2_beta, c.dim, p + "ln2_beta");
        require_shape(w.w1, c.dim, c.mlp_dim, p + "w1");
        require_len(w.b1, c.mlp_dim, p + "b1");
        require_shape(w.w2, c.mlp_dim, c.dim, p + "w2");
        require_len(w.b2, c.dim, p + "b2");
    }
    if (c.final_norm) {
        require_len(final_gamma, c.dim, "final_gamma");
        require_len(final_beta, c.dim, "final_beta");
    }
}

EncoderWeights random_weights(const EncoderConfig& config, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x76697400});
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.dim));
    auto fill = [&](std::vector<float>& v) {
        for (auto& x : v) x = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
    };
    auto matrix = [&](int r, int c) {
        Matrix m(r, c);
        fill(m.data);
        return m;
    };
    auto vec = [&](int n) {
        std::vector<float> v(static_cast<std::size_t>(n));
        fill(v);
        return v;
    };

    EncoderWeights w;
    w.config = config;
    w.patch_embed = matrix(config.patch_size * config.patch_size * 3, config.dim);
    w.patch_bias = vec(config.dim);
    w.pos_table = matrix(config.base_rows * config.base_cols, config.dim);
    for (int l = 0; l < config.layers; ++l) {
        LayerWeights lw;
        lw.ln1_gamma.assign(config.dim, 1.0f);
        lw.ln1_beta.assign(config.dim, 0.0f);
        lw.wq = matrix(config.dim, config.key_dim);
        lw.wk = matrix(config.dim, config.key_dim);
        lw.wv = matrix(config.dim, config.dim);
        lw.ln2_gamma.assign(config.dim, 1.0f);
        lw.ln2_beta.assign(config.dim, 0.0f);
        lw.w1 = matrix(config.dim, config.mlp_dim);
        lw.b1 = vec(config.mlp_dim);
        lw.w2 = matrix(config.mlp_dim, config.dim);
        lw.b2 = vec(config.dim);
        w.layers.push_back(std::move(lw));
    }
    if (config.final_norm) {
        w.final_gamma.assign(config.dim, 1.0f);
        w.final_beta.assign(config.dim, 0.0f);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Archive mapping

namespace {

NamedTensor tensor_of(const Matrix& m) { return {{m.rows, m.cols}, m.data}; }
NamedTensor tensor_of(const std::vector<float>& v) { return {{static_cast<std::int64_t>(v.size())}, v}; }

Matrix matrix_of(const Archive& a, const std::string& name) {
    const auto& t = a.at(name);
    if (t.shape.size() != 2) throw LoadError("tensor '" + name + "': expected rank 2");
    Matrix m(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
    m.data = t.data;
    return m;
}

std::vector<float> vector_of(const Archive& a, const std::string& name) {
    const auto& t = a.at(name);
    if (t.shape.size() != 1) throw LoadError("tensor '" + name + "': expected rank 1");
    return t.data;
}

} // namespace

Archive to_archive(const EncoderWeights& w) {
    Archive a;
    const auto& c = w.config;
    a.metadata = {{"kind", "encoder"},
                  {"dim", c.dim},
                  {"key_dim", c.key_dim},
                  {"mlp_dim", c.mlp_dim},
                  {"layers", c.layers},
                  {"patch_size", c.patch_size},
                  {"base_rows", c.base_rows},
                  {"base_cols", c.base_cols},
                  {"final_norm", c.final_norm},
                  {"pooling", c.pooling == Pooling::mean ? "mean" : "max"}};
    a.tensors["patch_embed"] = tensor_of(w.patch_embed);
    a.tensors["patch_bias"] = tensor_of(w.patch_bias);
    a.tensors["pos_table"] = tensor_of(w.pos_table);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& lw = w.layers[l];
        const auto p = "layer" + std::to_string(l + 1) + ".";
        a.tensors[p + "ln1_gamma"] = tensor_of(lw.ln1_gamma);
        a.tensors[p + "ln1_beta"] = tensor_of(lw.ln1_beta);
        a.tensors[p + "wq"] = tensor_of(lw.wq);
        a.tensors[p + "wk"] = tensor_of(lw.wk);
        a.tensors[p + "wv"] = tensor_of(lw.wv);
        a.tensors[p + "ln2_gamma"] = tensor_of(lw.ln2_gamma);
        a.tensors[p + "ln2_beta"] = tensor_of(lw.ln2_beta);
        a.tensors[p + "w1"] = tensor_of(lw.w1);
        a.tensors[p + "b1"] = tensor_of(lw.b1);
        a.tensors[p + "w2"] = tensor_of(lw.w2);
        a.tensors[p + "b2"] = tensor_of(lw.b2);
    }
    if (c.final_norm) {
        a.tensors["final_gamma"] = tensor_of(w.final_gamma);
        a.tensors["final_beta"] = tensor_of(w.final_beta);
    }
    return a;
}

EncoderWeights from_archive(const Archive& a) {
    EncoderWeights w;
    try {
        const auto& m = a.metadata;
        auto& c = w.config;
        c.dim = m.at("dim").get<int>();
        c.key_dim = m.at("key_dim").get<int>();
        c.mlp_dim = m.at("mlp_dim").get<int>();
        c.layers = m.at("layers").get<int>();
        c.patch_size = m.at("patch_size").get<int>();
        c.base_rows = m.at("base_rows").get<int>();
        c.base_cols = m.at("base_cols").get<int>();
        c.final_norm = m.value("final_norm", true);
        c.pooling = m.value("pooling", std::string("mean")) == "max" ? Pooling::max : Pooling::mean;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("encoder archive metadata incomplete: ") + e.what());
    }
    w.patch_embed = matrix_of(a, "patch_embed");
    w.patch_bias = vector_of(a, "patch_bias");
    w.pos_table = matrix_of(a, "pos_table");
    for (int l = 0; l < w.config.layers; ++l) {
        const auto p = "layer" + std::to_string(l + 1) + ".";
        LayerWeights lw;
        lw.ln1_gamma = vector_of(a, p + "ln1_gamma");
        lw.ln1_beta = vector_of(a, p + "ln1_beta");
        lw.wq = matrix_of(a, p + "wq");
        lw.wk = matrix_of(a, p + "wk");
        lw.wv = matrix_of(a, p + "wv");
        lw.ln2_gamma = vector_of(a, p + "ln2_gamma");
        lw.ln2_beta = vector_of(a, p + "ln2_beta");
        lw.w1 = matrix_of(a, p + "w1");
        lw.b1 = vector_of(a, p + "b1");
        lw.w2 = matrix_of(a, p + "w2");
        lw.b2 = vector_of(a, p + "b2");
        w.layers.push_back(std::move(lw));
    }
    if (w.config.final_norm) {
        w.final_gamma = vector_of(a, "final_gamma");
        w.final_beta = vector_of(a, "final_beta");
    }
    try {
        w.validate();
    } catch (const Error& e) {
        throw LoadError(e.what());
    }
    return w;
}

void save_weights(const std::filesystem::path& path, const EncoderWeights& weights) {
    write_archive(path, to_archive(weights));
}

EncoderWeights load_weights(const std::filesystem::path& path) { return from_archive(read_archive(path)); }

// ---------------------------------------------------------------------------
// Forward pass

float gelu(float x) {
    const double xd = x;
    return static_cast<float>(0.5 * xd * (1.0 + std::tanh(0.7978845608028654 * (xd + 0.044715 * xd * xd * xd))));
}

Matrix layer_norm(const Matrix& x, std::span<const float> gamma, std::span<const float> beta) {
    Matrix out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const auto row = x.row(i);
        double mean = 0.0;
        for (float v : row) mean += v;
        mean /= x.cols;
        double var = 0.0;
        for (float v : row) var += (v - mean) * (v - mean);
        var /= x.cols;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        auto dst = out.row(i);
        for (int d = 0; d < x.cols; ++d) dst[d] = static_cast<float>((row[d] - mean) * inv * gamma[d] + beta[d]);
    }
    return out;
}

void mlp_residual(const LayerWeights& layer, Matrix& x) {
    Matrix hidden = matmul(layer_norm(x, layer.ln2_gamma, layer.ln2_beta), layer.w1);
    for (int i = 0; i < hidden.rows; ++i) {
        auto row = hidden.row(i);
        for (int d = 0; d < hidden.cols; ++d) row[d] = gelu(row[d] + layer.b1[d]);
    }
    const Matrix out = matmul(hidden, layer.w2);
    for (int i = 0; i < x.rows; ++i) {
        auto row = x.row(i);
        const auto delta = out.row(i);
        for (int d = 0; d < x.cols; ++d) row[d] = row[d] + (delta[d] + layer.b2[d]);
    }
}

Matrix embed_patches(const EncoderWeights& weights, const Image& image, int stride, PatchGrid* grid_out) {
    image.validate();
    const auto& c = weights.config;
    Patches patches = patchify(image, c.patch_size, stride);
    Matrix x = matmul(patches.tokens, weights.patch_embed);
    const Matrix pos = interp_pos_encoding(weights.pos_table, c.base_rows, c.base_cols, patches.grid.rows,
                                           patches.grid.cols);
    for (int i = 0; i < x.rows; ++i) {
        auto row = x.row(i);
        const auto p = pos.row(i);
        for (int d = 0; d < x.cols; ++d) row[d] = row[d] + weights.patch_bias[d] + p[d];
    }
    if (grid_out) *grid_out = patches.grid;
    return x;
}

namespace {

void project_qkv(const LayerWeights& layer, const Matrix& x, Matrix& q, Matrix& k, Matrix& v) {
    const Matrix t = layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
    q = matmul(t, layer.wq);
    k = matmul(t, layer.wk);
    v = matmul(t, layer.wv);
}

void add_in_place(Matrix& x, const Matrix& delta) {
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = x.data[i] + delta.data[i];
}

// Full block with optional score edit; shares kernels with the split path so
// that splicing reproduces the monolithic pass exactly.
void run_block(const LayerWeights& layer, Matrix& x, const ScoreTransform& edit) {
    Matrix q, k, v;
    project_qkv(layer, x, q, k, v);
    Matrix scores = attention_scores(q, k);
    if (edit) edit(scores);
    add_in_place(x, attend(std::move(scores), v));
    mlp_residual(layer, x);
}

std::vector<float> finish(const EncoderWeights& weights, const Matrix& x) {
    const auto& c = weights.config;
    const Matrix y = c.final_norm ? layer_norm(x, weights.final_gamma, weights.final_beta) : x;
    std::vector<float> out(static_cast<std::size_t>(y.cols), 0.0f);
    if (c.pooling == Pooling::max) {
        for (int d = 0; d < y.cols; ++d) {
            float m = y(0, d);
            for (int i = 1; i < y.rows; ++i) m = std::max(m, y(i, d));
            out[d] = m;
        }
        return out;
    }
    for (int d = 0; d < y.cols; ++d) {
        double s = 0.0;
        for (int i = 0; i < y.rows; ++i) s += y(i, d);
        out[d] = static_cast<float>(s / y.rows);
    }
    return out;
}

void check_layer(const EncoderWeights& weights, int layer) {
    if (layer < 1 || layer > weights.config.layers)
        throw IndexError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(weights.config.layers));
}

} // namespace

LayerInputs forward_to_layer(const EncoderWeights& weights, const Image& image, int stride, int layer) {
    check_layer(weights, layer);
    LayerInputs out;
    out.x = embed_patches(weights, image, stride, &out.grid);
    for (int l = 1; l < layer; ++l) run_block(weights.layers[l - 1], out.x, {});
    project_qkv(weights.layers[layer - 1], out.x, out.q, out.k, out.v);
    return out;
}

Matrix attention_scores(const Matrix& q, const Matrix& k) {
    Matrix g = matmul_transposed(q, k);
    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(q.cols)));
    for (auto& s : g.data) s *= scale;
    return g;
}

void softmax_rows(Matrix& scores) {
    for (int i = 0; i < scores.rows; ++i) {
        auto row = scores.row(i);
        const float m = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (auto& s : row) {
            s = static_cast<float>(std::exp(static_cast<double>(s) - m));
            sum += s;
        }
        const double inv = 1.0 / sum;
        for (auto& s : row) s = static_cast<float>(s * inv);
    }
}

Matrix attend(Matrix scores, const Matrix& v) {
    if (scores.cols != v.rows) throw DimensionError("attention: score columns differ from value rows");
    softmax_rows(scores);
    return matmul(scores, v);
}

Matrix post_attention(const LayerInputs& in, Matrix scores) {
    Matrix h = in.x;
    add_in_place(h, attend(std::move(scores), in.v));
    return h;
}

std::vector<float> encoder_suffix(const EncoderWeights& weights, Matrix h, int layer, const ScoreTransform& later) {
    check_layer(weights, layer);
    if (h.cols != weights.config.dim || h.rows == 0)
        throw DimensionError("encoder_suffix: token matrix has " + std::to_string(h.cols) + " columns, expected " +
                             std::to_string(weights.config.dim));
    mlp_residual(weights.layers[layer - 1], h);
    for (int l = layer + 1; l <= weights.config.layers; ++l) run_block(weights.layers[l - 1], h, later);
    return finish(weights, h);
}

std::vector<float> forward(const EncoderWeights& weights, const Image& image, int stride) {
    Matrix x = embed_patches(weights, image, stride);
    for (const auto& layer : weights.layers) run_block(layer, x, {});
    return finish(weights, x);
}

} // namespace ld::vit
