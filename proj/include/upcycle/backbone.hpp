#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "upcycle/voxelgrid.hpp"

namespace upcycle {

struct BackboneSpec {
    int num_layers = 5;
    int in_channels = 4;
    // Output channels per layer.
    std::vector<int> channels = {8, 16, 16, 16, 16};
    int kernel = 3;
    // Per-layer (z, y, x) stride factors. Default halves z at layers 2 and 4.
    std::vector<std::array<int, 3>> strides = {
        {1, 1, 1}, {2, 1, 1}, {1, 1, 1}, {2, 1, 1}, {1, 1, 1}};
    uint64_t seed = 0;

    void validate() const;
};

struct ConvLayer {
    int c_in = 0;
    int c_out = 0;
    int kernel = 3;
    std::array<int, 3> stride = {1, 1, 1};
    // Weight layout: [offset][c_out][c_in] with offset = (dz*k + dy)*k + dx.
    std::vector<double> weights;

    size_t weight_count() const {
        return static_cast<size_t>(kernel) * kernel * kernel * c_out * c_in;
    }
    double* offset_matrix(int offset) {
        return weights.data() + static_cast<size_t>(offset) * c_out * c_in;
    }
    const double* offset_matrix(int offset) const {
        return weights.data() + static_cast<size_t>(offset) * c_out * c_in;
    }
};

// Deterministic toy 3D backbone: a stack of sparse 3D convolutions with
// rectification and no bias terms, so zero input propagates to zero output.
struct Backbone {
    BackboneSpec spec;
    std::vector<ConvLayer> layers;
    bool frozen = false;
};

// Seeded Xavier-uniform initialization: each weight drawn from [-a, a] with
// a = sqrt(6 / (fan_in + fan_out)), fan = kernel^3 * channels.
Backbone init_backbone(const BackboneSpec& spec);
double xavier_bound(int kernel, int c_in, int c_out);

// One layer's activation volume, kept per layer when a tape is recorded.
struct VolumeDims {
    int d = 0, h = 0, w = 0;
};

struct LayerRecord {
    VolumeDims out_dims;
    std::vector<VoxelIndex> sites;  // sorted active output sites
    std::vector<double> post;       // post-ReLU activations, site-major
    std::vector<uint8_t> mask;      // 1 where pre-activation > 0
};

struct BackboneTape {
    SparseVoxelGrid input;
    std::vector<LayerRecord> records;
};

// Forward pass; records per-layer activations into `tape` when non-null.
// The input grid's channel count must match the spec.
BevFeature extract_grid_feature(const Backbone& bb, const SparseVoxelGrid& grid,
                                BackboneTape* tape = nullptr);

struct BackboneGrads {
    std::vector<std::vector<double>> weights;  // same layout as ConvLayer::weights

    void init_like(const Backbone& bb);
    void add_scaled(const BackboneGrads& other, double scale);
};

// Accumulates d(loss)/d(weights) given the gradient on stored BEV cells.
// `bev_grad` is aligned with `bev.cells` (bev.size() * bev.channels values).
void backbone_backward(const Backbone& bb, const BackboneTape& tape,
                       const BevFeature& bev, std::span<const double> bev_grad,
                       BackboneGrads& grads);

void apply_gradients(Backbone& bb, const BackboneGrads& grads, double lr);

// Unordered keypoint feature set: n positions with d-dim vectors each.
struct SetFeature {
    std::vector<std::array<double, 3>> positions;
    std::vector<double> values;  // n * d, point-major
    int n = 0;
    int d = 0;
};

// Farthest-point-sampled keypoints (seeded start) with bilinear reads from
// the BEV map. Points outside the grid extent are ignored; an effectively
// empty cloud is rejected. Fewer than n usable points repeat cyclically.
SetFeature extract_set_feature(std::span<const Point3> points, const BevFeature& bev,
                               int n, uint64_t seed);

// Bilinear read of one BEV cell vector at a metric (x, y) position.
void bev_bilinear(const BevFeature& bev, double x, double y, double* out);

}  // namespace upcycle
