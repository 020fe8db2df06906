#include "upcycle/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace upcycle {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool all_finite(std::initializer_list<double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace

double normalize_yaw(double yaw) {
    double y = std::fmod(yaw, 2.0 * kPi);
    if (y <= -kPi) y += 2.0 * kPi;
    if (y > kPi) y -= 2.0 * kPi;
    return y;
}

Box3D::Box3D(double cx_, double cy_, double cz_, double length_, double width_,
             double height_, double yaw_, int class_id_)
    : cx(cx_), cy(cy_), cz(cz_), length(length_), width(width_),
      height(height_), yaw(normalize_yaw(yaw_)), class_id(class_id_) {
    if (!all_finite({cx, cy, cz, length, width, height, yaw_})) {
        throw std::invalid_argument("Box3D: non-finite field");
    }
    if (length <= 0.0 || width <= 0.0 || height <= 0.0) {
        throw std::invalid_argument("Box3D: non-positive dimension");
    }
}

Detection::Detection(const Box3D& box_, double cls_conf_, double iou_conf_)
    : box(box_), cls_conf(cls_conf_), iou_conf(iou_conf_) {
    if (cls_conf < 0.0 || cls_conf > 1.0 || iou_conf < 0.0 || iou_conf > 1.0) {
        throw std::invalid_argument("Detection: confidence outside [0,1]");
    }
}

std::array<Vec2, 4> box_corners_bev(const Box3D& box) {
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double hl = 0.5 * box.length;
    const double hw = 0.5 * box.width;
    // Box-frame corners, counter-clockwise from (+l/2, +w/2).
    const std::array<Vec2, 4> local = {
        Vec2{hl, hw}, Vec2{-hl, hw}, Vec2{-hl, -hw}, Vec2{hl, -hw}};
    std::array<Vec2, 4> out;
    for (size_t i = 0; i < 4; ++i) {
        out[i].x = box.cx + local[i].x * c - local[i].y * s;
        out[i].y = box.cy + local[i].x * s + local[i].y * c;
    }
    return out;
}

double polygon_area(std::span<const Vec2> poly) {
    if (poly.size() < 3) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % poly.size()];
        acc += p.x * q.y - q.x * p.y;
    }
    return 0.5 * std::abs(acc);
}

double convex_intersection_area(std::span<const Vec2> subject, std::span<const Vec2> clip) {
    std::vector<Vec2> poly(subject.begin(), subject.end());
    std::vector<Vec2> next;
    next.reserve(8);
    const size_t m = clip.size();
    for (size_t e = 0; e < m && poly.size() >= 3; ++e) {
        const Vec2 a = clip[e];
        const Vec2 b = clip[(e + 1) % m];
        const double ex = b.x - a.x;
        const double ey = b.y - a.y;
        next.clear();
        const size_t n = poly.size();
        for (size_t i = 0; i < n; ++i) {
            const Vec2 p = poly[i];
            const Vec2 q = poly[(i + 1) % n];
            // Signed side of the clip edge; >= 0 is inside for a CCW clip polygon.
            const double sp = ex * (p.y - a.y) - ey * (p.x - a.x);
            const double sq = ex * (q.y - a.y) - ey * (q.x - a.x);
            if (sp >= 0.0) next.push_back(p);
            if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
                const double t = sp / (sp - sq);
                next.push_back(Vec2{p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
            }
        }
        poly = next;
    }
    if (poly.size() < 3) return 0.0;
    return polygon_area(poly);
}

double iou_bev(const Box3D& a, const Box3D& b) {
    const auto ca = box_corners_bev(a);
    const auto cb = box_corners_bev(b);
    const double inter = convex_intersection_area(ca, cb);
    const double area_a = a.length * a.width;
    const double area_b = b.length * b.width;
    const double uni = area_a + area_b - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
    const auto ca = box_corners_bev(a);
    const auto cb = box_corners_bev(b);
    const double inter_area = convex_intersection_area(ca, cb);
    const double z_lo = std::max(a.cz - 0.5 * a.height, b.cz - 0.5 * b.height);
    const double z_hi = std::min(a.cz + 0.5 * a.height, b.cz + 0.5 * b.height);
    const double z_overlap = std::max(0.0, z_hi - z_lo);
    const double inter_vol = inter_area * z_overlap;
    const double vol_a = a.length * a.width * a.height;
    const double vol_b = b.length * b.width * b.height;
    const double uni = vol_a + vol_b - inter_vol;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter_vol / uni, 0.0, 1.0);
}

bool point_in_box(const Point3& point, const Box3D& box) {
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double dx = point.x - box.cx;
    const double dy = point.y - box.cy;
    const double dz = point.z - box.cz;
    const double lx = dx * c + dy * s;
    const double ly = -dx * s + dy * c;
    return std::abs(lx) <= 0.5 * box.length && std::abs(ly) <= 0.5 * box.width &&
           std::abs(dz) <= 0.5 * box.height;
}

std::vector<bool> points_in_box(std::span<const Point3> points, const Box3D& box) {
    std::vector<bool> mask(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        mask[i] = point_in_box(points[i], box);
    }
    return mask;
}

std::vector<Detection> nms_bev(std::span<const Detection> dets, double iou_threshold) {
    if (iou_threshold < 0.0 || iou_threshold > 1.0) {
        throw std::invalid_argument("nms_bev: iou_threshold outside [0,1]");
    }
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        return dets[i].cls_conf > dets[j].cls_conf;
    });
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (size_t idx : order) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (iou_bev(dets[idx].box, k.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[idx]);
    }
    return kept;
}

}  // namespace upcycle
