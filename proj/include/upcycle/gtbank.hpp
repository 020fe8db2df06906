#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "upcycle/geometry.hpp"
#include "upcycle/voxelgrid.hpp"

namespace upcycle {

// One annotated object: its original box plus the cropped points expressed
// in the box frame (origin at the box center, box-aligned axes).
struct GtEntry {
    Box3D box;
    std::vector<Point3> local_points;
};

// Built exclusively from labeled scenes; pseudo labels never enter.
struct GtDatabase {
    std::vector<GtEntry> entries;
    std::vector<std::vector<size_t>> by_class;  // class_id -> entry indices

    size_t size() const { return entries.size(); }
};

struct LabeledScene {
    std::vector<Point3> points;
    std::vector<Box3D> boxes;
};

// Crops each labeled box's points into the box frame. Boxes containing no
// points are skipped.
GtDatabase build_gt_database(std::span<const LabeledScene> labeled);

// A sampled pose for inserting a database entry into a scene.
struct Placement {
    size_t entry_index = 0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double yaw = 0.0;
};

// The entry's box moved to the placement pose.
Box3D placed_box(const GtDatabase& db, const Placement& p);

// The entry's points transformed into the scene frame at the placement pose.
std::vector<Point3> placed_points(const GtDatabase& db, const Placement& p);

// Samples up to k poses with uniform (x, y) over the extent and uniform yaw,
// z resting on the ground plane. A candidate is rejected when its footprint
// leaves the extent or its BEV IoU with any forbidden box or any previously
// accepted placement is positive. Each slot retries at most 20 times.
std::vector<Placement> sample_placements(const GtDatabase& db,
                                         std::span<const Box3D> forbidden, int k,
                                         const GridSpec& extent, double ground_z,
                                         uint64_t seed);

}  // namespace upcycle
