#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "upcycle/backbone.hpp"
#include "upcycle/geometry.hpp"
#include "upcycle/gtbank.hpp"
#include "upcycle/voxelgrid.hpp"

namespace upcycle {

// --- Raw-level (point cloud) policies -------------------------------------

struct RawFlip {};
struct RawRotate {
    double angle = 0.0;  // about +z through the extent center
};
struct RawRandomSample {
    double keep_ratio = 1.0;
};
struct RawGtPlace {
    std::vector<Placement> placements;
};
using RawPolicy = std::variant<RawFlip, RawRotate, RawRandomSample, RawGtPlace>;

struct AugmentedScene {
    std::vector<Point3> points;
    std::vector<Box3D> boxes;
};

// Applies one raw policy to points and labels together so labels stay
// consistent with the transformed cloud. GtPlace requires a database.
AugmentedScene augment_points(std::span<const Point3> points,
                              std::span<const Box3D> boxes, const RawPolicy& policy,
                              const GridSpec& extent, const GtDatabase* db,
                              uint64_t seed);

// --- Feature-level policies ------------------------------------------------

struct FeatFlip {};
struct FeatRotate {
    double angle = 0.0;
};
struct FeatNoise {
    double sigma = 0.0;
};
struct FeatRandomNull {
    double null_ratio = 0.05;
};
using FeaturePolicy = std::variant<FeatFlip, FeatRotate, FeatNoise, FeatRandomNull>;

BevFeature perturb_feature(const BevFeature& f, const FeaturePolicy& policy,
                           uint64_t seed);

// Grid-type feature-level GT sampling: wherever the GT feature stores a cell,
// that cell replaces the scene cell wholesale; no blending.
BevFeature f_gt_grid(const BevFeature& scene, const BevFeature& gt);

// Set-type feature-level GT sampling. Scene points inside any GT box are
// excluded first; then n draws (with replacement) pick the remaining scene
// set with probability scene_nz/(scene_nz + gt_nz) and the GT set otherwise.
// `scene_ratio_multiplier` scales the scene-side weight (default 1).
SetFeature f_gt_set(const SetFeature& scene, const SetFeature& gt,
                    std::span<const Box3D> gt_boxes, size_t scene_nz, size_t gt_nz,
                    int n, uint64_t seed, double scene_ratio_multiplier = 1.0);

// --- Raw-vs-feature augmentation fidelity ----------------------------------

enum class PairedAugment { None, Flip, Rotate, GtSample };

struct RmsePolicy {
    PairedAugment kind = PairedAugment::None;
    double angle = 0.0;                  // Rotate
    std::vector<Placement> placements;   // GtSample
};

struct RmseResult {
    int height = 0;
    int width = 0;
    std::vector<BevIndex> cells;  // cells with nonzero error, sorted
    std::vector<double> rmse;     // per cell, root mean square over channels
    double scalar = 0.0;          // over the full H*W*C tensor
};

// Compares backbone(raw-augmented scene) against feature-augmented
// backbone(scene) cell by cell.
RmseResult rmse_map(std::span<const Point3> points, const RmsePolicy& policy,
                    const GtDatabase* db, const Backbone& bb, const GridSpec& spec);

}  // namespace upcycle
