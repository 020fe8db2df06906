#pragma once

#include <span>
#include <vector>

#include "upcycle/geometry.hpp"
#include "upcycle/gtbank.hpp"

namespace upcycle {

struct SslThresholds {
    double tau_iou = 0.5;
    double tau_cls = 0.4;
};

enum class LabelOrigin { Pseudo, Gt };

struct HybridLabel {
    Box3D box;
    LabelOrigin origin = LabelOrigin::Pseudo;
};

struct HybridLabelSet {
    std::vector<HybridLabel> labels;

    std::vector<Box3D> boxes() const;
    size_t size() const { return labels.size(); }
};

// Keeps a detection iff cls_conf >= tau_cls and iou_conf >= tau_iou
// (equality passes). Output preserves input order.
std::vector<Box3D> filter_detections(std::span<const Detection> dets,
                                     const SslThresholds& th);

// Unites filtered pseudo labels with placed GT labels. The caller must have
// sampled the placements against these pseudo boxes; any gt/pseudo pair with
// positive BEV IoU is a contract violation and is rejected. Building the set
// involves no model inference.
HybridLabelSet make_hybrid(std::span<const Box3D> pseudo, const GtDatabase& db,
                           std::span<const Placement> placed_gt);

}  // namespace upcycle
