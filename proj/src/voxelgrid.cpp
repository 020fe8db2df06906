#include "upcycle/voxelgrid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace upcycle {

namespace {

bool all_zero(const double* v, int n) {
    for (int i = 0; i < n; ++i) {
        if (v[i] != 0.0) return false;
    }
    return true;
}

}  // namespace

int GridSpec::dim_x() const { return static_cast<int>(std::ceil((x_max - x_min) / vx)); }
int GridSpec::dim_y() const { return static_cast<int>(std::ceil((y_max - y_min) / vy)); }
int GridSpec::dim_z() const { return static_cast<int>(std::ceil((z_max - z_min) / vz)); }

void GridSpec::validate() const {
    if (!(x_max > x_min && y_max > y_min && z_max > z_min)) {
        throw std::invalid_argument("GridSpec: max must exceed min on every axis");
    }
    if (!(vx > 0.0 && vy > 0.0 && vz > 0.0)) {
        throw std::invalid_argument("GridSpec: voxel sizes must be positive");
    }
    if (dim_x() < 1 || dim_y() < 1 || dim_z() < 1) {
        throw std::invalid_argument("GridSpec: degenerate dimensions");
    }
}

const double* SparseVoxelGrid::find(int32_t z, int32_t y, int32_t x) const {
    const VoxelIndex key{z, y, x};
    auto it = std::lower_bound(cells.begin(), cells.end(), key);
    if (it == cells.end() || !(*it == key)) return nullptr;
    return cell_values(static_cast<size_t>(it - cells.begin()));
}

const double* BevFeature::find(int32_t row, int32_t col) const {
    const BevIndex key{row, col};
    auto it = std::lower_bound(cells.begin(), cells.end(), key);
    if (it == cells.end() || !(*it == key)) return nullptr;
    return cell_values(static_cast<size_t>(it - cells.begin()));
}

namespace {

template <typename Index>
void sort_and_filter(int channels, std::vector<Index>& cells, std::vector<double>& values) {
    const size_t n = cells.size();
    if (values.size() != n * static_cast<size_t>(channels)) {
        throw std::invalid_argument("sparse builder: value count mismatch");
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return cells[a] < cells[b]; });
    for (size_t i = 1; i < n; ++i) {
        if (cells[order[i]] == cells[order[i - 1]]) {
            throw std::invalid_argument("sparse builder: duplicate cell index");
        }
    }
    std::vector<Index> out_cells;
    std::vector<double> out_values;
    out_cells.reserve(n);
    out_values.reserve(values.size());
    for (size_t i : order) {
        const double* v = values.data() + i * channels;
        if (all_zero(v, channels)) continue;
        out_cells.push_back(cells[i]);
        out_values.insert(out_values.end(), v, v + channels);
    }
    cells = std::move(out_cells);
    values = std::move(out_values);
}

}  // namespace

SparseVoxelGrid make_sparse_grid(const GridSpec& spec, int channels,
                                 std::vector<VoxelIndex> cells,
                                 std::vector<double> values) {
    spec.validate();
    if (channels < 1) throw std::invalid_argument("make_sparse_grid: channels < 1");
    const int D = spec.dim_z(), H = spec.dim_y(), W = spec.dim_x();
    for (const VoxelIndex& c : cells) {
        if (c.z < 0 || c.z >= D || c.y < 0 || c.y >= H || c.x < 0 || c.x >= W) {
            throw std::invalid_argument("make_sparse_grid: index out of range");
        }
    }
    sort_and_filter(channels, cells, values);
    return SparseVoxelGrid{spec, channels, std::move(cells), std::move(values)};
}

BevFeature make_bev_feature(const GridSpec& spec, int height, int width, int channels,
                            std::vector<BevIndex> cells, std::vector<double> values) {
    spec.validate();
    if (channels < 1 || height < 1 || width < 1) {
        throw std::invalid_argument("make_bev_feature: bad shape");
    }
    for (const BevIndex& c : cells) {
        if (c.row < 0 || c.row >= height || c.col < 0 || c.col >= width) {
            throw std::invalid_argument("make_bev_feature: index out of range");
        }
    }
    sort_and_filter(channels, cells, values);
    return BevFeature{spec, height, width, channels, std::move(cells), std::move(values)};
}

SparseVoxelGrid voxelize(std::span<const Point3> points, const GridSpec& spec) {
    spec.validate();
    const int D = spec.dim_z(), H = spec.dim_y(), W = spec.dim_x();

    struct Slot {
        VoxelIndex idx;
        std::vector<Point3> pts;
    };
    std::vector<Slot> slots;
    std::vector<int64_t> keys;  // parallel, for lookup
    auto key_of = [&](const VoxelIndex& v) {
        return (static_cast<int64_t>(v.z) * H + v.y) * W + v.x;
    };

    // Bucket points per voxel; membership uses half-open [min, max) intervals.
    std::vector<std::pair<int64_t, Point3>> tagged;
    tagged.reserve(points.size());
    for (const Point3& p : points) {
        if (p.x < spec.x_min || p.x >= spec.x_max || p.y < spec.y_min ||
            p.y >= spec.y_max || p.z < spec.z_min || p.z >= spec.z_max) {
            continue;
        }
        const auto xi = static_cast<int32_t>(std::floor((p.x - spec.x_min) / spec.vx));
        const auto yi = static_cast<int32_t>(std::floor((p.y - spec.y_min) / spec.vy));
        const auto zi = static_cast<int32_t>(std::floor((p.z - spec.z_min) / spec.vz));
        if (xi < 0 || xi >= W || yi < 0 || yi >= H || zi < 0 || zi >= D) continue;
        tagged.emplace_back(key_of(VoxelIndex{zi, yi, xi}), p);
    }
    // Accumulation order is canonicalized so the result is bit-identical
    // under input permutation.
    std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        const Point3& p = a.second;
        const Point3& q = b.second;
        if (p.x != q.x) return p.x < q.x;
        if (p.y != q.y) return p.y < q.y;
        if (p.z != q.z) return p.z < q.z;
        return p.intensity < q.intensity;
    });

    std::vector<VoxelIndex> cells;
    std::vector<double> values;
    size_t i = 0;
    while (i < tagged.size()) {
        size_t j = i;
        while (j < tagged.size() && tagged[j].first == tagged[i].first) ++j;
        const int64_t key = tagged[i].first;
        const auto xi = static_cast<int32_t>(key % W);
        const auto yi = static_cast<int32_t>((key / W) % H);
        const auto zi = static_cast<int32_t>(key / (static_cast<int64_t>(W) * H));
        const double cx = spec.x_min + (xi + 0.5) * spec.vx;
        const double cy = spec.y_min + (yi + 0.5) * spec.vy;
        const double cz = spec.z_min + (zi + 0.5) * spec.vz;
        double sx = 0.0, sy = 0.0, sz = 0.0, si = 0.0;
        for (size_t k = i; k < j; ++k) {
            const Point3& p = tagged[k].second;
            sx += p.x - cx;
            sy += p.y - cy;
            sz += p.z - cz;
            si += p.intensity;
        }
        const double n = static_cast<double>(j - i);
        cells.push_back(VoxelIndex{zi, yi, xi});
        values.push_back(sx / n);
        values.push_back(sy / n);
        values.push_back(sz / n);
        values.push_back(si / n);
        i = j;
    }
    return make_sparse_grid(spec, 4, std::move(cells), std::move(values));
}

BevFeature bev_compress(const SparseVoxelGrid& grid) {
    const int D = grid.spec.dim_z();
    const int H = grid.spec.dim_y();
    const int W = grid.spec.dim_x();
    const int c_in = grid.channels;
    const int c_out = D * c_in;

    std::vector<BevIndex> cells;
    std::vector<double> values;
    // Input cells are sorted by (z,y,x); regroup per column.
    std::vector<std::pair<BevIndex, size_t>> columns;
    columns.reserve(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) {
        columns.emplace_back(BevIndex{grid.cells[i].y, grid.cells[i].x}, i);
    }
    std::sort(columns.begin(), columns.end(), [](const auto& a, const auto& b) {
        if (!(a.first == b.first)) return a.first < b.first;
        return a.second < b.second;
    });
    size_t i = 0;
    while (i < columns.size()) {
        size_t j = i;
        while (j < columns.size() && columns[j].first == columns[i].first) ++j;
        cells.push_back(columns[i].first);
        const size_t base = values.size();
        values.resize(base + c_out, 0.0);
        for (size_t k = i; k < j; ++k) {
            const size_t idx = columns[k].second;
            const int32_t zi = grid.cells[idx].z;
            const double* v = grid.cell_values(idx);
            std::copy(v, v + c_in, values.begin() + base + static_cast<size_t>(zi) * c_in);
        }
        i = j;
    }
    return make_bev_feature(grid.spec, H, W, c_out, std::move(cells), std::move(values));
}

size_t nonzero_cell_count(const BevFeature& feature) { return feature.size(); }

}  // namespace upcycle
