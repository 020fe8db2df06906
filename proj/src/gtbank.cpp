#include "upcycle/gtbank.hpp"

#include <cmath>
#include <stdexcept>

#include "upcycle/random.hpp"

namespace upcycle {

GtDatabase build_gt_database(std::span<const LabeledScene> labeled) {
    GtDatabase db;
    for (const LabeledScene& scene : labeled) {
        for (const Box3D& box : scene.boxes) {
            const double c = std::cos(box.yaw);
            const double s = std::sin(box.yaw);
            GtEntry entry;
            entry.box = box;
            for (const Point3& p : scene.points) {
                if (!point_in_box(p, box)) continue;
                const double dx = p.x - box.cx;
                const double dy = p.y - box.cy;
                Point3 local;
                local.x = dx * c + dy * s;
                local.y = -dx * s + dy * c;
                local.z = p.z - box.cz;
                local.intensity = p.intensity;
                entry.local_points.push_back(local);
            }
            if (entry.local_points.empty()) continue;
            const size_t idx = db.entries.size();
            db.entries.push_back(std::move(entry));
            const auto cls = static_cast<size_t>(box.class_id);
            if (db.by_class.size() <= cls) db.by_class.resize(cls + 1);
            db.by_class[cls].push_back(idx);
        }
    }
    return db;
}

Box3D placed_box(const GtDatabase& db, const Placement& p) {
    const GtEntry& e = db.entries.at(p.entry_index);
    return Box3D(p.x, p.y, p.z, e.box.length, e.box.width, e.box.height, p.yaw,
                 e.box.class_id);
}

std::vector<Point3> placed_points(const GtDatabase& db, const Placement& p) {
    const GtEntry& e = db.entries.at(p.entry_index);
    const double c = std::cos(p.yaw);
    const double s = std::sin(p.yaw);
    std::vector<Point3> out;
    out.reserve(e.local_points.size());
    for (const Point3& lp : e.local_points) {
        Point3 q;
        q.x = p.x + lp.x * c - lp.y * s;
        q.y = p.y + lp.x * s + lp.y * c;
        q.z = p.z + lp.z;
        q.intensity = lp.intensity;
        out.push_back(q);
    }
    return out;
}

namespace {

bool footprint_inside(const Box3D& box, const GridSpec& extent) {
    for (const Vec2& c : box_corners_bev(box)) {
        if (c.x < extent.x_min || c.x > extent.x_max || c.y < extent.y_min ||
            c.y > extent.y_max) {
            return false;
        }
    }
    return true;
}

}  // namespace

std::vector<Placement> sample_placements(const GtDatabase& db,
                                         std::span<const Box3D> forbidden, int k,
                                         const GridSpec& extent, double ground_z,
                                         uint64_t seed) {
    if (k < 0) throw std::invalid_argument("sample_placements: k < 0");
    if (k == 0) return {};
    if (db.entries.empty()) {
        throw std::invalid_argument("sample_placements: empty database");
    }
    extent.validate();

    constexpr int kRetries = 20;
    constexpr double kPi = 3.14159265358979323846;
    auto rng = make_rng(derive_seed(seed, "gt-placement"));
    std::uniform_int_distribution<size_t> pick(0, db.entries.size() - 1);
    std::uniform_real_distribution<double> ux(extent.x_min, extent.x_max);
    std::uniform_real_distribution<double> uy(extent.y_min, extent.y_max);
    std::uniform_real_distribution<double> uyaw(-kPi, kPi);

    std::vector<Placement> accepted;
    std::vector<Box3D> accepted_boxes;
    accepted.reserve(static_cast<size_t>(k));
    for (int slot = 0; slot < k; ++slot) {
        for (int attempt = 0; attempt < kRetries; ++attempt) {
            Placement cand;
            cand.entry_index = pick(rng);
            cand.x = ux(rng);
            cand.y = uy(rng);
            // Map [-pi, pi) onto the canonical (-pi, pi] range.
            cand.yaw = normalize_yaw(uyaw(rng));
            const GtEntry& entry = db.entries[cand.entry_index];
            cand.z = ground_z + 0.5 * entry.box.height;
            const Box3D box = placed_box(db, cand);
            if (!footprint_inside(box, extent)) continue;
            bool overlaps = false;
            for (const Box3D& f : forbidden) {
                if (iou_bev(box, f) > 0.0) {
                    overlaps = true;
                    break;
                }
            }
            if (!overlaps) {
                for (const Box3D& a : accepted_boxes) {
                    if (iou_bev(box, a) > 0.0) {
                        overlaps = true;
                        break;
                    }
                }
            }
            if (overlaps) continue;
            accepted.push_back(cand);
            accepted_boxes.push_back(box);
            break;
        }
    }
    return accepted;
}

}  // namespace upcycle
