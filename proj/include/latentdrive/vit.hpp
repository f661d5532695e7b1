#pragma once

// Minimal single-head pre-norm transformer encoder over image patches.
//
// Block ℓ (1-based):  t = LN₁(x);  Q,K,V = t·W_Q, t·W_K, t·W_V
//                     x ← x + softmax(Q·Kᵀ/√D_k)·V
//                     x ← x + W₂·gelu(W₁·LN₂(x) + b₁) + b₂
// Output: optional final LN per token, then pooling over tokens.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "latentdrive/archive.hpp"
#include "latentdrive/matrix.hpp"

namespace ld::vit {

/// H×W×3 image with channel-interleaved rows; values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, float fill = 0.0f) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    /// Throws ValidationError on shape mismatch or values outside [0,1].
    void validate() const;
};

struct GridCoord {
    int x = 0;  // column
    int y = 0;  // row
};

/// Patch layout; patch index i is row-stacked: i = y·cols + x.
struct PatchGrid {
    int rows = 0;
    int cols = 0;
    int patch_size = 0;
    int stride = 0;

    int size() const { return rows * cols; }
    GridCoord coord(int i) const { return {i % cols, i / cols}; }
    int index(int row, int col) const { return row * cols + col; }
    bool operator==(const PatchGrid&) const = default;
};

struct Patches {
    PatchGrid grid;
    Matrix tokens;  // N × (patch_size²·3)
};

PatchGrid make_grid(int height, int width, int patch_size, int stride);
Patches patchify(const Image& image, int patch_size, int stride);

/// Bilinear resampling of a (base_rows·base_cols)×D table onto rows×cols,
/// using align-corners normalized coordinates.
Matrix interp_pos_encoding(const Matrix& base, int base_rows, int base_cols, int rows, int cols);

enum class Pooling { mean, max };

struct EncoderConfig {
    int dim = 32;
    int key_dim = 32;
    int mlp_dim = 64;
    int layers = 4;
    int patch_size = 4;
    int base_rows = 2;
    int base_cols = 2;
    bool final_norm = true;
    Pooling pooling = Pooling::mean;
};

struct LayerWeights {
    std::vector<float> ln1_gamma, ln1_beta;
    Matrix wq, wk, wv;  // D×D_k, D×D_k, D×D
    std::vector<float> ln2_gamma, ln2_beta;
    Matrix w1;          // D×mlp
    std::vector<float> b1;
    Matrix w2;          // mlp×D
    std::vector<float> b2;
};

struct EncoderWeights {
    EncoderConfig config;
    Matrix patch_embed;  // (patch²·3)×D
    std::vector<float> patch_bias;
    Matrix pos_table;    // (base_rows·base_cols)×D
    std::vector<LayerWeights> layers;
    std::vector<float> final_gamma, final_beta;

    /// Throws DimensionError / ValidationError when shapes disagree or values are non-finite.
    void validate() const;
};

/// Every matrix, bias, and positional entry uniform in [−1/√D, 1/√D]; norm gains 1, offsets 0.
EncoderWeights random_weights(const EncoderConfig& config, std::uint64_t seed);

Archive to_archive(const EncoderWeights& weights);
EncoderWeights from_archive(const Archive& archive);
void save_weights(const std::filesystem::path& path, const EncoderWeights& weights);
EncoderWeights load_weights(const std::filesystem::path& path);

/// State entering block ℓ together with that block's projections.
struct LayerInputs {
    PatchGrid grid;
    Matrix x;
    Matrix q, k, v;
};

/// Patch embedding plus (interpolated) positional encoding: the input of block 1.
Matrix embed_patches(const EncoderWeights& weights, const Image& image, int stride, PatchGrid* grid_out = nullptr);

LayerInputs forward_to_layer(const EncoderWeights& weights, const Image& image, int stride, int layer);

/// G = Q·Kᵀ/√D_k.
Matrix attention_scores(const Matrix& q, const Matrix& k);

/// Row-wise numerically stable softmax, in place.
void softmax_rows(Matrix& scores);

/// softmax(scores)·V; consumes the score matrix.
Matrix attend(Matrix scores, const Matrix& v);

/// x + softmax(scores)·V for the block whose inputs are `in`.
Matrix post_attention(const LayerInputs& in, Matrix scores);

/// Hook to edit a score matrix before softmax (used for masking at later layers).
using ScoreTransform = std::function<void(Matrix&)>;

/// Runs block ℓ's MLP sublayer on the post-attention state `h`, then blocks
/// ℓ+1..L, the final norm, and pooling. `later` (if set) edits scores of blocks ℓ+1..L.
std::vector<float> encoder_suffix(const EncoderWeights& weights, Matrix h, int layer,
                                  const ScoreTransform& later = {});

/// Monolithic unmasked forward pass.
std::vector<float> forward(const EncoderWeights& weights, const Image& image, int stride);

// Sublayers, exposed for reference implementations and tests.
Matrix layer_norm(const Matrix& x, std::span<const float> gamma, std::span<const float> beta);
void mlp_residual(const LayerWeights& layer, Matrix& x);
float gelu(float x);

} // namespace ld::vit
