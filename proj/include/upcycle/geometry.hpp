#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace upcycle {

// Single lidar return. Coordinates in meters, intensity in [0,1].
struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double intensity = 0.0;
};

// Normalizes an angle into (-pi, pi].
double normalize_yaw(double yaw);

// Oriented 3D box (gravity-aligned, yaw about +z). Construction validates
// dimensions and normalizes yaw so every Box3D in the system is canonical.
struct Box3D {
    double cx = 0.0;
    double cy = 0.0;
    double cz = 0.0;
    double length = 1.0;
    double width = 1.0;
    double height = 1.0;
    double yaw = 0.0;
    int class_id = 0;

    Box3D() = default;
    Box3D(double cx, double cy, double cz, double length, double width,
          double height, double yaw, int class_id = 0);
};

struct Detection {
    Box3D box;
    double cls_conf = 0.0;
    double iou_conf = 0.0;

    Detection() = default;
    Detection(const Box3D& box, double cls_conf, double iou_conf);
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// BEV footprint corners, counter-clockwise, starting from the (+l/2, +w/2)
// corner in the box frame.
std::array<Vec2, 4> box_corners_bev(const Box3D& box);

// Exact rotated-rectangle IoU via convex polygon clipping.
double iou_bev(const Box3D& a, const Box3D& b);

// BEV intersection area times z-overlap, over the volume union.
double iou_3d(const Box3D& a, const Box3D& b);

// Boundary-inclusive containment test in the box frame.
std::vector<bool> points_in_box(std::span<const Point3> points, const Box3D& box);
bool point_in_box(const Point3& point, const Box3D& box);

// Greedy score-descending suppression on cls_conf; ties keep the earlier
// input index. A detection is dropped when its BEV IoU with an already kept
// one exceeds iou_threshold.
std::vector<Detection> nms_bev(std::span<const Detection> dets, double iou_threshold);

// Area of a convex polygon given in order (shoelace).
double polygon_area(std::span<const Vec2> poly);

// Intersection area of two convex polygons (Sutherland-Hodgman clipping).
// Degenerate clips (<3 vertices) count as zero area.
double convex_intersection_area(std::span<const Vec2> subject, std::span<const Vec2> clip);

}  // namespace upcycle
