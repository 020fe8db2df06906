#include "upcycle/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "upcycle/random.hpp"

namespace upcycle {

void BackboneSpec::validate() const {
    if (num_layers < 1) throw std::invalid_argument("BackboneSpec: num_layers < 1");
    if (in_channels < 1) throw std::invalid_argument("BackboneSpec: in_channels < 1");
    if (static_cast<int>(channels.size()) != num_layers) {
        throw std::invalid_argument("BackboneSpec: channels size mismatch");
    }
    if (static_cast<int>(strides.size()) != num_layers) {
        throw std::invalid_argument("BackboneSpec: strides size mismatch");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("BackboneSpec: kernel must be odd and positive");
    }
    for (int c : channels) {
        if (c < 1) throw std::invalid_argument("BackboneSpec: channel count < 1");
    }
    for (const auto& s : strides) {
        if (s[0] < 1 || s[1] < 1 || s[2] < 1) {
            throw std::invalid_argument("BackboneSpec: stride < 1");
        }
    }
}

double xavier_bound(int kernel, int c_in, int c_out) {
    const double taps = static_cast<double>(kernel) * kernel * kernel;
    return std::sqrt(6.0 / (taps * c_in + taps * c_out));
}

Backbone init_backbone(const BackboneSpec& spec) {
    spec.validate();
    Backbone bb;
    bb.spec = spec;
    auto rng = make_rng(derive_seed(spec.seed, "backbone-init"));
    int c_in = spec.in_channels;
    for (int l = 0; l < spec.num_layers; ++l) {
        ConvLayer layer;
        layer.c_in = c_in;
        layer.c_out = spec.channels[l];
        layer.kernel = spec.kernel;
        layer.stride = spec.strides[l];
        layer.weights.resize(layer.weight_count());
        const double a = xavier_bound(spec.kernel, layer.c_in, layer.c_out);
        std::uniform_real_distribution<double> dist(-a, a);
        for (double& w : layer.weights) w = dist(rng);
        c_in = layer.c_out;
        bb.layers.push_back(std::move(layer));
    }
    return bb;
}

namespace {

struct Volume {
    VolumeDims dims;
    int channels = 0;
    std::vector<VoxelIndex> sites;  // sorted (z,y,x)
    std::vector<double> vals;       // site-major
};

int ceil_div(int a, int b) { return (a + b - 1) / b; }

VolumeDims strided_dims(const VolumeDims& in, const std::array<int, 3>& s) {
    return VolumeDims{ceil_div(in.d, s[0]), ceil_div(in.h, s[1]), ceil_div(in.w, s[2])};
}

size_t flat_index(const VolumeDims& dims, const VoxelIndex& v) {
    return (static_cast<size_t>(v.z) * dims.h + v.y) * dims.w + v.x;
}

std::vector<int32_t> build_index_map(const VolumeDims& dims,
                                     const std::vector<VoxelIndex>& sites) {
    std::vector<int32_t> map(static_cast<size_t>(dims.d) * dims.h * dims.w, -1);
    for (size_t i = 0; i < sites.size(); ++i) {
        map[flat_index(dims, sites[i])] = static_cast<int32_t>(i);
    }
    return map;
}

// Regular (non-submanifold) sparse conv: the active set dilates by the kernel
// radius each layer, which is what makes receptive-field locality exact.
Volume conv_forward(const ConvLayer& layer, const Volume& in, LayerRecord* rec) {
    const int k = layer.kernel;
    const int pad = k / 2;
    const auto s = layer.stride;
    Volume out;
    out.dims = strided_dims(in.dims, s);
    out.channels = layer.c_out;

    // Active output sites: anything reachable from an occupied input cell.
    std::vector<uint8_t> active(static_cast<size_t>(out.dims.d) * out.dims.h * out.dims.w, 0);
    auto mark_axis = [&](int i, int stride, int dim_out, int* lo, int* hi) {
        // o*stride = i - d + pad over d in [0,k): compute the o range.
        int t_hi = i + pad;
        int t_lo = i + pad - (k - 1);
        int o_lo = t_lo <= 0 ? 0 : ceil_div(t_lo, stride);
        int o_hi = t_hi < 0 ? -1 : t_hi / stride;
        if (o_hi >= dim_out) o_hi = dim_out - 1;
        *lo = o_lo;
        *hi = o_hi;
    };
    for (const VoxelIndex& cell : in.sites) {
        int zl, zh, yl, yh, xl, xh;
        mark_axis(cell.z, s[0], out.dims.d, &zl, &zh);
        mark_axis(cell.y, s[1], out.dims.h, &yl, &yh);
        mark_axis(cell.x, s[2], out.dims.w, &xl, &xh);
        for (int oz = zl; oz <= zh; ++oz) {
            if ((oz * s[0] + pad) - cell.z < 0 || (oz * s[0] + pad) - cell.z >= k) continue;
            for (int oy = yl; oy <= yh; ++oy) {
                if ((oy * s[1] + pad) - cell.y < 0 || (oy * s[1] + pad) - cell.y >= k) continue;
                for (int ox = xl; ox <= xh; ++ox) {
                    if ((ox * s[2] + pad) - cell.x < 0 || (ox * s[2] + pad) - cell.x >= k) continue;
                    active[(static_cast<size_t>(oz) * out.dims.h + oy) * out.dims.w + ox] = 1;
                }
            }
        }
    }
    out.sites.reserve(in.sites.size() * 2);
    for (int z = 0; z < out.dims.d; ++z) {
        for (int y = 0; y < out.dims.h; ++y) {
            for (int x = 0; x < out.dims.w; ++x) {
                if (active[(static_cast<size_t>(z) * out.dims.h + y) * out.dims.w + x]) {
                    out.sites.push_back(VoxelIndex{z, y, x});
                }
            }
        }
    }

    const std::vector<int32_t> in_map = build_index_map(in.dims, in.sites);
    out.vals.assign(out.sites.size() * static_cast<size_t>(layer.c_out), 0.0);
    if (rec) {
        rec->out_dims = out.dims;
        rec->sites = out.sites;
        rec->mask.assign(out.sites.size() * static_cast<size_t>(layer.c_out), 0);
    }

    const int c_in = layer.c_in;
    const int c_out = layer.c_out;
    std::vector<double> acc(static_cast<size_t>(c_out));
    for (size_t si = 0; si < out.sites.size(); ++si) {
        const VoxelIndex o = out.sites[si];
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int dz = 0; dz < k; ++dz) {
            const int iz = o.z * s[0] + dz - pad;
            if (iz < 0 || iz >= in.dims.d) continue;
            for (int dy = 0; dy < k; ++dy) {
                const int iy = o.y * s[1] + dy - pad;
                if (iy < 0 || iy >= in.dims.h) continue;
                for (int dx = 0; dx < k; ++dx) {
                    const int ix = o.x * s[2] + dx - pad;
                    if (ix < 0 || ix >= in.dims.w) continue;
                    const int32_t slot =
                        in_map[(static_cast<size_t>(iz) * in.dims.h + iy) * in.dims.w + ix];
                    if (slot < 0) continue;
                    const double* iv = in.vals.data() + static_cast<size_t>(slot) * c_in;
                    const int off = (dz * k + dy) * k + dx;
                    const double* w = layer.offset_matrix(off);
                    for (int co = 0; co < c_out; ++co) {
                        const double* wr = w + static_cast<size_t>(co) * c_in;
                        double dot = 0.0;
                        for (int ci = 0; ci < c_in; ++ci) dot += wr[ci] * iv[ci];
                        acc[co] += dot;
                    }
                }
            }
        }
        double* ov = out.vals.data() + si * static_cast<size_t>(c_out);
        for (int co = 0; co < c_out; ++co) {
            const double pre = acc[co];
            if (pre > 0.0) {
                ov[co] = pre;
                if (rec) rec->mask[si * static_cast<size_t>(c_out) + co] = 1;
            }
        }
    }
    if (rec) rec->post = out.vals;
    return out;
}

Volume grid_to_volume(const SparseVoxelGrid& grid) {
    Volume v;
    v.dims = VolumeDims{grid.spec.dim_z(), grid.spec.dim_y(), grid.spec.dim_x()};
    v.channels = grid.channels;
    v.sites = grid.cells;
    v.vals = grid.values;
    return v;
}

BevFeature volume_to_bev(const Volume& v, const GridSpec& spec) {
    const int c_out = v.dims.d * v.channels;
    std::vector<BevIndex> cells;
    std::vector<double> values;
    std::vector<std::pair<BevIndex, size_t>> columns;
    columns.reserve(v.sites.size());
    for (size_t i = 0; i < v.sites.size(); ++i) {
        columns.emplace_back(BevIndex{v.sites[i].y, v.sites[i].x}, i);
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
        for (size_t k2 = i; k2 < j; ++k2) {
            const size_t idx = columns[k2].second;
            const int32_t zi = v.sites[idx].z;
            const double* src = v.vals.data() + idx * static_cast<size_t>(v.channels);
            std::copy(src, src + v.channels,
                      values.begin() + base + static_cast<size_t>(zi) * v.channels);
        }
        i = j;
    }
    return make_bev_feature(spec, v.dims.h, v.dims.w, c_out, std::move(cells),
                            std::move(values));
}

}  // namespace

BevFeature extract_grid_feature(const Backbone& bb, const SparseVoxelGrid& grid,
                                BackboneTape* tape) {
    if (grid.channels != bb.spec.in_channels) {
        throw std::invalid_argument("extract_grid_feature: channel mismatch");
    }
    if (tape) {
        tape->input = grid;
        tape->records.clear();
        tape->records.resize(bb.layers.size());
    }
    Volume v = grid_to_volume(grid);
    for (size_t l = 0; l < bb.layers.size(); ++l) {
        v = conv_forward(bb.layers[l], v, tape ? &tape->records[l] : nullptr);
    }
    return volume_to_bev(v, grid.spec);
}

void BackboneGrads::init_like(const Backbone& bb) {
    weights.clear();
    weights.reserve(bb.layers.size());
    for (const ConvLayer& l : bb.layers) {
        weights.emplace_back(l.weight_count(), 0.0);
    }
}

void BackboneGrads::add_scaled(const BackboneGrads& other, double scale) {
    for (size_t l = 0; l < weights.size(); ++l) {
        for (size_t i = 0; i < weights[l].size(); ++i) {
            weights[l][i] += scale * other.weights[l][i];
        }
    }
}

void backbone_backward(const Backbone& bb, const BackboneTape& tape,
                       const BevFeature& bev, std::span<const double> bev_grad,
                       BackboneGrads& grads) {
    if (grads.weights.size() != bb.layers.size()) grads.init_like(bb);
    if (bev_grad.size() != bev.values.size()) {
        throw std::invalid_argument("backbone_backward: gradient size mismatch");
    }
    const size_t L = bb.layers.size();
    const LayerRecord& last = tape.records[L - 1];
    const int c_last = bb.layers[L - 1].c_out;

    // Scatter the BEV-cell gradient back onto final-layer sites.
    std::vector<double> g_post(last.sites.size() * static_cast<size_t>(c_last), 0.0);
    for (size_t si = 0; si < last.sites.size(); ++si) {
        const VoxelIndex& site = last.sites[si];
        const double* g_cell = bev.find(site.y, site.x);
        if (!g_cell) continue;
        const size_t cell_idx =
            static_cast<size_t>(g_cell - bev.values.data()) / bev.channels;
        const double* g = bev_grad.data() + cell_idx * bev.channels +
                          static_cast<size_t>(site.z) * c_last;
        std::copy(g, g + c_last, g_post.begin() + si * static_cast<size_t>(c_last));
    }

    for (size_t l = L; l-- > 0;) {
        const ConvLayer& layer = bb.layers[l];
        const LayerRecord& rec = tape.records[l];
        const int k = layer.kernel;
        const int pad = k / 2;
        const auto s = layer.stride;
        const int c_in = layer.c_in;
        const int c_out = layer.c_out;

        const std::vector<VoxelIndex>& in_sites =
            l == 0 ? tape.input.cells : tape.records[l - 1].sites;
        const std::vector<double>& in_vals =
            l == 0 ? tape.input.values : tape.records[l - 1].post;
        const VolumeDims in_dims =
            l == 0 ? VolumeDims{tape.input.spec.dim_z(), tape.input.spec.dim_y(),
                                tape.input.spec.dim_x()}
                   : tape.records[l - 1].out_dims;
        const std::vector<int32_t> in_map = build_index_map(in_dims, in_sites);

        std::vector<double> g_in(in_sites.size() * static_cast<size_t>(c_in), 0.0);
        std::vector<double>& dw = grads.weights[l];

        for (size_t si = 0; si < rec.sites.size(); ++si) {
            const VoxelIndex o = rec.sites[si];
            double* gp = g_post.data() + si * static_cast<size_t>(c_out);
            // ReLU gate.
            bool any = false;
            for (int co = 0; co < c_out; ++co) {
                if (!rec.mask[si * static_cast<size_t>(c_out) + co]) gp[co] = 0.0;
                if (gp[co] != 0.0) any = true;
            }
            if (!any) continue;
            for (int dz = 0; dz < k; ++dz) {
                const int iz = o.z * s[0] + dz - pad;
                if (iz < 0 || iz >= in_dims.d) continue;
                for (int dy = 0; dy < k; ++dy) {
                    const int iy = o.y * s[1] + dy - pad;
                    if (iy < 0 || iy >= in_dims.h) continue;
                    for (int dx = 0; dx < k; ++dx) {
                        const int ix = o.x * s[2] + dx - pad;
                        if (ix < 0 || ix >= in_dims.w) continue;
                        const int32_t slot =
                            in_map[(static_cast<size_t>(iz) * in_dims.h + iy) * in_dims.w + ix];
                        if (slot < 0) continue;
                        const double* iv = in_vals.data() + static_cast<size_t>(slot) * c_in;
                        double* gi = g_in.data() + static_cast<size_t>(slot) * c_in;
                        const int off = (dz * k + dy) * k + dx;
                        const size_t wbase = static_cast<size_t>(off) * c_out * c_in;
                        for (int co = 0; co < c_out; ++co) {
                            const double g = gp[co];
                            if (g == 0.0) continue;
                            const double* wr = layer.weights.data() + wbase +
                                               static_cast<size_t>(co) * c_in;
                            double* dwr = dw.data() + wbase + static_cast<size_t>(co) * c_in;
                            for (int ci = 0; ci < c_in; ++ci) {
                                dwr[ci] += g * iv[ci];
                                gi[ci] += g * wr[ci];
                            }
                        }
                    }
                }
            }
        }
        g_post = std::move(g_in);
    }
}

void apply_gradients(Backbone& bb, const BackboneGrads& grads, double lr) {
    for (size_t l = 0; l < bb.layers.size(); ++l) {
        std::vector<double>& w = bb.layers[l].weights;
        const std::vector<double>& g = grads.weights[l];
        for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    }
}

void bev_bilinear(const BevFeature& bev, double x, double y, double* out) {
    const GridSpec& s = bev.spec;
    const double cw = (s.x_max - s.x_min) / bev.width;
    const double ch = (s.y_max - s.y_min) / bev.height;
    const double u = (x - s.x_min) / cw - 0.5;
    const double v = (y - s.y_min) / ch - 0.5;
    const double uf = std::floor(u);
    const double vf = std::floor(v);
    const int u0 = static_cast<int>(uf);
    const int v0 = static_cast<int>(vf);
    const double fu = u - uf;
    const double fv = v - vf;
    std::fill(out, out + bev.channels, 0.0);
    const double wgt[4] = {(1.0 - fv) * (1.0 - fu), (1.0 - fv) * fu,
                           fv * (1.0 - fu), fv * fu};
    const int rc[4][2] = {{v0, u0}, {v0, u0 + 1}, {v0 + 1, u0}, {v0 + 1, u0 + 1}};
    for (int i = 0; i < 4; ++i) {
        const int row = rc[i][0], col = rc[i][1];
        if (row < 0 || row >= bev.height || col < 0 || col >= bev.width) continue;
        const double* cell = bev.find(row, col);
        if (!cell) continue;
        const double w = wgt[i];
        for (int c = 0; c < bev.channels; ++c) out[c] += w * cell[c];
    }
}

SetFeature extract_set_feature(std::span<const Point3> points, const BevFeature& bev,
                               int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("extract_set_feature: n < 1");
    const GridSpec& s = bev.spec;
    std::vector<size_t> usable;
    usable.reserve(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        const Point3& p = points[i];
        if (p.x >= s.x_min && p.x < s.x_max && p.y >= s.y_min && p.y < s.y_max &&
            p.z >= s.z_min && p.z < s.z_max) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) {
        throw std::invalid_argument("extract_set_feature: no points inside the extent");
    }

    // Farthest-point sampling, seeded start, lowest-index tie break.
    auto rng = make_rng(derive_seed(seed, "set-feature-fps"));
    const size_t count = usable.size();
    const size_t m = std::min(static_cast<size_t>(n), count);
    std::vector<size_t> order;
    order.reserve(m);
    std::vector<double> dist(count, std::numeric_limits<double>::infinity());
    size_t cur = std::uniform_int_distribution<size_t>(0, count - 1)(rng);
    order.push_back(cur);
    for (size_t pick = 1; pick < m; ++pick) {
        const Point3& c = points[usable[cur]];
        for (size_t i = 0; i < count; ++i) {
            const Point3& p = points[usable[i]];
            const double dx = p.x - c.x, dy = p.y - c.y, dz = p.z - c.z;
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < dist[i]) dist[i] = d2;
        }
        size_t best = 0;
        double best_d = -1.0;
        for (size_t i = 0; i < count; ++i) {
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        cur = best;
        order.push_back(cur);
    }

    SetFeature out;
    out.n = n;
    out.d = bev.channels;
    out.positions.resize(n);
    out.values.resize(static_cast<size_t>(n) * bev.channels);
    for (int i = 0; i < n; ++i) {
        const Point3& p = points[usable[order[i % m]]];
        out.positions[i] = {p.x, p.y, p.z};
        bev_bilinear(bev, p.x, p.y, out.values.data() + static_cast<size_t>(i) * bev.channels);
    }
    return out;
}

}  // namespace upcycle
