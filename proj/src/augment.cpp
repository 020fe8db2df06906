#include "upcycle/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "upcycle/random.hpp"

namespace upcycle {

namespace {

AugmentedScene flip_scene(std::span<const Point3> points, std::span<const Box3D> boxes) {
    AugmentedScene out;
    out.points.reserve(points.size());
    for (Point3 p : points) {
        p.y = -p.y;
        out.points.push_back(p);
    }
    out.boxes.reserve(boxes.size());
    for (const Box3D& b : boxes) {
        out.boxes.emplace_back(b.cx, -b.cy, b.cz, b.length, b.width, b.height, -b.yaw,
                               b.class_id);
    }
    return out;
}

AugmentedScene rotate_scene(std::span<const Point3> points, std::span<const Box3D> boxes,
                            double angle, const GridSpec& extent) {
    const double cx = 0.5 * (extent.x_min + extent.x_max);
    const double cy = 0.5 * (extent.y_min + extent.y_max);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    AugmentedScene out;
    out.points.reserve(points.size());
    for (Point3 p : points) {
        const double dx = p.x - cx;
        const double dy = p.y - cy;
        p.x = cx + dx * c - dy * s;
        p.y = cy + dx * s + dy * c;
        out.points.push_back(p);
    }
    out.boxes.reserve(boxes.size());
    for (const Box3D& b : boxes) {
        const double dx = b.cx - cx;
        const double dy = b.cy - cy;
        out.boxes.emplace_back(cx + dx * c - dy * s, cy + dx * s + dy * c, b.cz,
                               b.length, b.width, b.height, b.yaw + angle, b.class_id);
    }
    return out;
}

}  // namespace

AugmentedScene augment_points(std::span<const Point3> points,
                              std::span<const Box3D> boxes, const RawPolicy& policy,
                              const GridSpec& extent, const GtDatabase* db,
                              uint64_t seed) {
    if (std::holds_alternative<RawFlip>(policy)) {
        return flip_scene(points, boxes);
    }
    if (const auto* rot = std::get_if<RawRotate>(&policy)) {
        return rotate_scene(points, boxes, rot->angle, extent);
    }
    if (const auto* rs = std::get_if<RawRandomSample>(&policy)) {
        if (rs->keep_ratio <= 0.0 || rs->keep_ratio > 1.0) {
            throw std::invalid_argument("augment_points: keep_ratio outside (0,1]");
        }
        auto rng = make_rng(derive_seed(seed, "raw-random-sample"));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        AugmentedScene out;
        out.boxes.assign(boxes.begin(), boxes.end());
        out.points.reserve(points.size());
        for (const Point3& p : points) {
            if (u(rng) < rs->keep_ratio) out.points.push_back(p);
        }
        return out;
    }
    const auto& place = std::get<RawGtPlace>(policy);
    if (!db) throw std::invalid_argument("augment_points: GtPlace requires a database");
    AugmentedScene out;
    out.points.assign(points.begin(), points.end());
    out.boxes.assign(boxes.begin(), boxes.end());
    for (const Placement& p : place.placements) {
        std::vector<Point3> pts = placed_points(*db, p);
        out.points.insert(out.points.end(), pts.begin(), pts.end());
        out.boxes.push_back(placed_box(*db, p));
    }
    return out;
}

namespace {

BevFeature feat_flip(const BevFeature& f) {
    std::vector<BevIndex> cells;
    cells.reserve(f.size());
    for (const BevIndex& c : f.cells) {
        cells.push_back(BevIndex{static_cast<int32_t>(f.height - 1 - c.row), c.col});
    }
    return make_bev_feature(f.spec, f.height, f.width, f.channels, std::move(cells),
                            f.values);
}

BevFeature feat_rotate(const BevFeature& f, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double cu = 0.5 * f.width;
    const double cv = 0.5 * f.height;
    std::vector<BevIndex> cells;
    std::vector<double> values;
    std::vector<double> sample(f.channels);
    for (int row = 0; row < f.height; ++row) {
        for (int col = 0; col < f.width; ++col) {
            // Inverse-map the output cell center, then interpolate.
            const double du = (col + 0.5) - cu;
            const double dv = (row + 0.5) - cv;
            const double us = cu + c * du + s * dv;
            const double vs = cv - s * du + c * dv;
            const double ui = us - 0.5;
            const double vi = vs - 0.5;
            const double uf = std::floor(ui);
            const double vf = std::floor(vi);
            const int u0 = static_cast<int>(uf);
            const int v0 = static_cast<int>(vf);
            const double fu = ui - uf;
            const double fv = vi - vf;
            std::fill(sample.begin(), sample.end(), 0.0);
            const double wgt[4] = {(1.0 - fv) * (1.0 - fu), (1.0 - fv) * fu,
                                   fv * (1.0 - fu), fv * fu};
            const int rc[4][2] = {{v0, u0}, {v0, u0 + 1}, {v0 + 1, u0}, {v0 + 1, u0 + 1}};
            bool any = false;
            for (int i = 0; i < 4; ++i) {
                if (wgt[i] == 0.0) continue;
                const int r = rc[i][0], q = rc[i][1];
                if (r < 0 || r >= f.height || q < 0 || q >= f.width) continue;
                const double* cell = f.find(r, q);
                if (!cell) continue;
                for (int ch = 0; ch < f.channels; ++ch) sample[ch] += wgt[i] * cell[ch];
                any = true;
            }
            if (!any) continue;
            cells.push_back(BevIndex{row, col});
            values.insert(values.end(), sample.begin(), sample.end());
        }
    }
    return make_bev_feature(f.spec, f.height, f.width, f.channels, std::move(cells),
                            std::move(values));
}

BevFeature feat_noise(const BevFeature& f, double sigma, uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("perturb_feature: sigma < 0");
    std::vector<double> values = f.values;
    if (sigma > 0.0) {
        auto rng = make_rng(derive_seed(seed, "feat-noise"));
        std::normal_distribution<double> g(0.0, sigma);
        for (double& v : values) v += g(rng);
    }
    return make_bev_feature(f.spec, f.height, f.width, f.channels, f.cells,
                            std::move(values));
}

BevFeature feat_random_null(const BevFeature& f, double null_ratio, uint64_t seed) {
    if (null_ratio <= 0.0 || null_ratio >= 1.0) {
        throw std::invalid_argument("perturb_feature: null_ratio outside (0,1)");
    }
    const size_t total = f.values.size();
    const auto count = static_cast<size_t>(std::llround(null_ratio * static_cast<double>(total)));
    std::vector<double> values = f.values;
    if (count > 0 && total > 0) {
        // Partial Fisher-Yates draw of `count` distinct value slots.
        auto rng = make_rng(derive_seed(seed, "feat-random-null"));
        std::vector<size_t> idx(total);
        for (size_t i = 0; i < total; ++i) idx[i] = i;
        for (size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<size_t> u(i, total - 1);
            std::swap(idx[i], idx[u(rng)]);
            values[idx[i]] = 0.0;
        }
    }
    return make_bev_feature(f.spec, f.height, f.width, f.channels, f.cells,
                            std::move(values));
}

}  // namespace

BevFeature perturb_feature(const BevFeature& f, const FeaturePolicy& policy,
                           uint64_t seed) {
    if (std::holds_alternative<FeatFlip>(policy)) return feat_flip(f);
    if (const auto* rot = std::get_if<FeatRotate>(&policy)) {
        return feat_rotate(f, rot->angle);
    }
    if (const auto* noise = std::get_if<FeatNoise>(&policy)) {
        return feat_noise(f, noise->sigma, seed);
    }
    return feat_random_null(f, std::get<FeatRandomNull>(policy).null_ratio, seed);
}

BevFeature f_gt_grid(const BevFeature& scene, const BevFeature& gt) {
    if (scene.height != gt.height || scene.width != gt.width ||
        scene.channels != gt.channels || !(scene.spec == gt.spec)) {
        throw std::invalid_argument("f_gt_grid: shape mismatch");
    }
    std::vector<BevIndex> cells;
    std::vector<double> values;
    cells.reserve(scene.size() + gt.size());
    size_t i = 0, j = 0;
    auto push = [&](const BevFeature& src, size_t k) {
        cells.push_back(src.cells[k]);
        const double* v = src.cell_values(k);
        values.insert(values.end(), v, v + src.channels);
    };
    while (i < scene.size() || j < gt.size()) {
        if (j == gt.size()) {
            push(scene, i++);
        } else if (i == scene.size()) {
            push(gt, j++);
        } else if (scene.cells[i] == gt.cells[j]) {
            push(gt, j++);  // GT wins wherever it stores a cell
            ++i;
        } else if (scene.cells[i] < gt.cells[j]) {
            push(scene, i++);
        } else {
            push(gt, j++);
        }
    }
    return make_bev_feature(scene.spec, scene.height, scene.width, scene.channels,
                            std::move(cells), std::move(values));
}

SetFeature f_gt_set(const SetFeature& scene, const SetFeature& gt,
                    std::span<const Box3D> gt_boxes, size_t scene_nz, size_t gt_nz,
                    int n, uint64_t seed, double scene_ratio_multiplier) {
    if (scene_nz == 0 || gt_nz == 0) {
        throw std::invalid_argument("f_gt_set: nonzero-cell counts must be positive");
    }
    if (n < 1) throw std::invalid_argument("f_gt_set: n < 1");
    if (scene.d != gt.d) throw std::invalid_argument("f_gt_set: dimension mismatch");
    if (scene_ratio_multiplier <= 0.0) {
        throw std::invalid_argument("f_gt_set: multiplier must be positive");
    }

    // f^{u\GT}: scene points outside every GT box.
    std::vector<size_t> scene_keep;
    scene_keep.reserve(static_cast<size_t>(scene.n));
    for (int i = 0; i < scene.n; ++i) {
        Point3 p{scene.positions[i][0], scene.positions[i][1], scene.positions[i][2], 0.0};
        bool inside = false;
        for (const Box3D& b : gt_boxes) {
            if (point_in_box(p, b)) {
                inside = true;
                break;
            }
        }
        if (!inside) scene_keep.push_back(static_cast<size_t>(i));
    }
    if (scene_keep.empty() && gt.n == 0) {
        throw std::invalid_argument("f_gt_set: both sources empty");
    }

    const double w_scene = scene_ratio_multiplier * static_cast<double>(scene_nz);
    const double p_scene =
        scene_keep.empty() ? 0.0 : w_scene / (w_scene + static_cast<double>(gt_nz));

    auto rng = make_rng(derive_seed(seed, "f-gt-set"));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    SetFeature out;
    out.n = n;
    out.d = scene.d;
    out.positions.resize(static_cast<size_t>(n));
    out.values.resize(static_cast<size_t>(n) * out.d);
    for (int i = 0; i < n; ++i) {
        const bool from_scene = gt.n == 0 || coin(rng) < p_scene;
        const SetFeature& src = from_scene ? scene : gt;
        size_t idx;
        if (from_scene) {
            std::uniform_int_distribution<size_t> u(0, scene_keep.size() - 1);
            idx = scene_keep[u(rng)];
        } else {
            std::uniform_int_distribution<size_t> u(0, static_cast<size_t>(gt.n) - 1);
            idx = u(rng);
        }
        out.positions[static_cast<size_t>(i)] = src.positions[idx];
        std::copy(src.values.begin() + static_cast<ptrdiff_t>(idx) * src.d,
                  src.values.begin() + static_cast<ptrdiff_t>(idx + 1) * src.d,
                  out.values.begin() + static_cast<ptrdiff_t>(i) * out.d);
    }
    return out;
}

RmseResult rmse_map(std::span<const Point3> points, const RmsePolicy& policy,
                    const GtDatabase* db, const Backbone& bb, const GridSpec& spec) {
    const BevFeature base = extract_grid_feature(bb, voxelize(points, spec));

    BevFeature raw_side = base;
    BevFeature feat_side = base;
    switch (policy.kind) {
        case PairedAugment::None:
            break;
        case PairedAugment::Flip: {
            const AugmentedScene s = augment_points(points, {}, RawFlip{}, spec, nullptr, 0);
            raw_side = extract_grid_feature(bb, voxelize(s.points, spec));
            feat_side = perturb_feature(base, FeatFlip{}, 0);
            break;
        }
        case PairedAugment::Rotate: {
            const AugmentedScene s =
                augment_points(points, {}, RawRotate{policy.angle}, spec, nullptr, 0);
            raw_side = extract_grid_feature(bb, voxelize(s.points, spec));
            feat_side = perturb_feature(base, FeatRotate{policy.angle}, 0);
            break;
        }
        case PairedAugment::GtSample: {
            if (!db) throw std::invalid_argument("rmse_map: GtSample requires a database");
            const AugmentedScene s = augment_points(
                points, {}, RawGtPlace{policy.placements}, spec, db, 0);
            raw_side = extract_grid_feature(bb, voxelize(s.points, spec));
            std::vector<Point3> gt_only;
            for (const Placement& p : policy.placements) {
                std::vector<Point3> pts = placed_points(*db, p);
                gt_only.insert(gt_only.end(), pts.begin(), pts.end());
            }
            const BevFeature gt_feat = extract_grid_feature(bb, voxelize(gt_only, spec));
            feat_side = f_gt_grid(base, gt_feat);
            break;
        }
    }

    RmseResult out;
    out.height = base.height;
    out.width = base.width;
    const int C = base.channels;
    double total_sq = 0.0;
    size_t i = 0, j = 0;
    const std::vector<double> zeros(static_cast<size_t>(C), 0.0);
    while (i < raw_side.size() || j < feat_side.size()) {
        BevIndex cell;
        const double* a = zeros.data();
        const double* b = zeros.data();
        if (j == feat_side.size() ||
            (i < raw_side.size() && raw_side.cells[i] < feat_side.cells[j])) {
            cell = raw_side.cells[i];
            a = raw_side.cell_values(i);
            ++i;
        } else if (i == raw_side.size() ||
                   (j < feat_side.size() && feat_side.cells[j] < raw_side.cells[i])) {
            cell = feat_side.cells[j];
            b = feat_side.cell_values(j);
            ++j;
        } else {
            cell = raw_side.cells[i];
            a = raw_side.cell_values(i);
            b = feat_side.cell_values(j);
            ++i;
            ++j;
        }
        double sq = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = a[c] - b[c];
            sq += d * d;
        }
        total_sq += sq;
        if (sq > 0.0) {
            out.cells.push_back(cell);
            out.rmse.push_back(std::sqrt(sq / C));
        }
    }
    const double denom =
        static_cast<double>(base.height) * base.width * static_cast<double>(C);
    out.scalar = std::sqrt(total_sq / denom);
    return out;
}

}  // namespace upcycle
