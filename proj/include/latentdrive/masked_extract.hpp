#pragma once

// Patch-aligned feature extraction by attention masking.
//
// For anchor patch j a mask m ∈ [0,1]^N weights how much every patch may
// contribute. At layer ℓ the scaled scores G = Q·Kᵀ/√D_k become
//     Ĝ[a,b] = G[a,b] + (1 − m_b)·r,   r < 0,
// and the feature is Desc^{ℓ→}(x + softmax(Ĝ)·V).

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdrive/feature_map.hpp"
#include "latentdrive/matrix.hpp"
#include "latentdrive/vit.hpp"

namespace ld::mask {

enum class MaskKind { box, exp_decay, inv_dist };

MaskKind parse_mask_kind(std::string_view name);
std::string to_string(MaskKind kind);

struct MaskConfig {
    MaskKind kind = MaskKind::box;
    double alpha = 2.0;        // box cutoff distance
    double norm_order = 2.0;   // z ≥ 1
    double strength = -1e4;    // r < 0
    bool all_layers = false;   // also mask blocks ℓ+1..L

    void validate() const;
};

struct AttentionMask {
    std::vector<float> weights;
    int anchor = -1;  // -1 for arbitrary regions
};

double patch_dist(int i, int j, const vit::PatchGrid& grid, double norm_order);

AttentionMask build_mask(int j, const vit::PatchGrid& grid, const MaskConfig& config);

/// Ĝ = G + (1 − M)·r with M the row-repeated mask. Throws ConfigError for r ≥ 0.
Matrix masked_scores(const Matrix& scores, std::span<const float> mask, double strength);

/// Holds the unmasked prefix (Q, K, V at layer ℓ) of one image so that any
/// number of masks can be evaluated without recomputing it.
class PatchExtractor {
public:
    PatchExtractor(const vit::EncoderWeights& weights, const vit::Image& image, int stride, int layer);

    const vit::PatchGrid& grid() const { return prefix_.grid; }
    int layer() const { return layer_; }

    std::vector<float> extract(std::span<const float> mask, double strength, bool all_layers = false) const;
    std::vector<float> extract_patch(int j, const MaskConfig& config) const;

private:
    const vit::EncoderWeights& weights_;
    int layer_;
    vit::LayerInputs prefix_;
};

std::vector<float> extract_patch_feature(const vit::EncoderWeights& weights, const vit::Image& image, int stride,
                                         int layer, int j, const MaskConfig& config);

/// Region masks must have length N with entries in [0,1] (ValidationError otherwise).
std::vector<float> extract_region_feature(const vit::EncoderWeights& weights, const vit::Image& image, int stride,
                                          int layer, std::span<const float> region, double strength = -1e4,
                                          bool all_layers = false);

/// Stride giving a rows×cols patch grid, preferring one that covers the image exactly; ConfigError listing achievable grids otherwise.
int stride_for_grid(int height, int width, int patch_size, int rows, int cols);

/// One prefix pass, then every cell in parallel (OpenMP).
FeatureMap extract_dense(const vit::EncoderWeights& weights, const vit::Image& image, int layer,
                         const MaskConfig& config, int rows, int cols);

/// Reference: one independent extract_patch_feature call per cell, in order.
FeatureMap extract_dense_serial(const vit::EncoderWeights& weights, const vit::Image& image, int layer,
                                const MaskConfig& config, int rows, int cols);

} // namespace ld::mask
