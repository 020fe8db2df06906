#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "upcycle/geometry.hpp"

namespace upcycle {

// Voxelization extent and resolution. Intervals are half-open per axis:
// a point exactly on a max boundary is dropped.
struct GridSpec {
    double x_min = 0.0, x_max = 70.4;
    double y_min = -40.0, y_max = 40.0;
    double z_min = -3.0, z_max = 1.0;
    double vx = 0.4, vy = 0.4, vz = 0.5;

    int dim_x() const;  // W
    int dim_y() const;  // H
    int dim_z() const;  // D
    void validate() const;
    bool operator==(const GridSpec&) const = default;
};

struct VoxelIndex {
    int32_t z = 0;
    int32_t y = 0;
    int32_t x = 0;
    bool operator==(const VoxelIndex&) const = default;
    bool operator<(const VoxelIndex& o) const {
        if (z != o.z) return z < o.z;
        if (y != o.y) return y < o.y;
        return x < o.x;
    }
};

// Sparse dense-channel voxel volume. Cells are sorted by (z, y, x) and hold
// exactly `channels` values each; all-zero vectors are never stored.
struct SparseVoxelGrid {
    GridSpec spec;
    int channels = 0;
    std::vector<VoxelIndex> cells;
    std::vector<double> values;  // cells.size() * channels, cell-major

    size_t size() const { return cells.size(); }
    const double* cell_values(size_t i) const { return values.data() + i * channels; }
    // nullptr when the cell is absent.
    const double* find(int32_t z, int32_t y, int32_t x) const;
};

struct BevIndex {
    int32_t row = 0;  // y
    int32_t col = 0;  // x
    bool operator==(const BevIndex&) const = default;
    bool operator<(const BevIndex& o) const {
        if (row != o.row) return row < o.row;
        return col < o.col;
    }
};

// Sparse BEV feature map; same storage discipline as SparseVoxelGrid.
struct BevFeature {
    GridSpec spec;
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<BevIndex> cells;
    std::vector<double> values;

    size_t size() const { return cells.size(); }
    const double* cell_values(size_t i) const { return values.data() + i * channels; }
    const double* find(int32_t row, int32_t col) const;
};

// Builds a sorted sparse structure from unsorted (index, vector) pairs,
// dropping all-zero vectors.
SparseVoxelGrid make_sparse_grid(const GridSpec& spec, int channels,
                                 std::vector<VoxelIndex> cells,
                                 std::vector<double> values);
BevFeature make_bev_feature(const GridSpec& spec, int height, int width, int channels,
                            std::vector<BevIndex> cells, std::vector<double> values);

// Mean-pooled 4-channel encoding (x/y/z offsets from the voxel center and
// intensity). Points outside the extent are dropped.
SparseVoxelGrid voxelize(std::span<const Point3> points, const GridSpec& spec);

// Stacks z slices into channels: output C = D * input channels, ascending zi.
BevFeature bev_compress(const SparseVoxelGrid& grid);

size_t nonzero_cell_count(const BevFeature& feature);

}  // namespace upcycle
