#pragma once

#include <span>
#include <vector>

#include "upcycle/geometry.hpp"

namespace upcycle {

enum class EvalMetric { Bev, ThreeD };

struct EvalConfig {
    double iou_threshold = 0.7;
    EvalMetric metric = EvalMetric::Bev;
    int ap_points = 40;
};

struct MatchResult {
    // Per detection, in descending-score order: the score and a TP flag.
    std::vector<double> scores;
    std::vector<bool> tp;
    std::vector<bool> gt_matched;
};

// Greedy matching: detections in descending cls_conf order each take the
// highest-IoU still-unmatched GT at or above the threshold.
MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const Box3D> gts, const EvalConfig& cfg);

// Interpolated average precision sampled at ap_points recall values in (0,1].
// No GTs and no detections is a perfect score by convention.
double average_precision(const MatchResult& flags, size_t num_gts,
                         const EvalConfig& cfg);

// Pools matches from several scenes into one PR curve.
double average_precision_pooled(std::span<const MatchResult> per_scene,
                                size_t total_gts, const EvalConfig& cfg);

}  // namespace upcycle
