#include "upcycle/pseudolabel.hpp"

#include <stdexcept>

namespace upcycle {

std::vector<Box3D> HybridLabelSet::boxes() const {
    std::vector<Box3D> out;
    out.reserve(labels.size());
    for (const HybridLabel& l : labels) out.push_back(l.box);
    return out;
}

std::vector<Box3D> filter_detections(std::span<const Detection> dets,
                                     const SslThresholds& th) {
    if (th.tau_iou < 0.0 || th.tau_iou > 1.0 || th.tau_cls < 0.0 || th.tau_cls > 1.0) {
        throw std::invalid_argument("filter_detections: thresholds outside [0,1]");
    }
    std::vector<Box3D> kept;
    for (const Detection& d : dets) {
        if (d.cls_conf >= th.tau_cls && d.iou_conf >= th.tau_iou) {
            kept.push_back(d.box);
        }
    }
    return kept;
}

HybridLabelSet make_hybrid(std::span<const Box3D> pseudo, const GtDatabase& db,
                           std::span<const Placement> placed_gt) {
    HybridLabelSet out;
    out.labels.reserve(pseudo.size() + placed_gt.size());
    for (const Box3D& b : pseudo) {
        out.labels.push_back(HybridLabel{b, LabelOrigin::Pseudo});
    }
    for (const Placement& p : placed_gt) {
        const Box3D gt = placed_box(db, p);
        for (const Box3D& b : pseudo) {
            if (iou_bev(gt, b) > 0.0) {
                throw std::invalid_argument(
                    "make_hybrid: placed GT overlaps a pseudo label");
            }
        }
        out.labels.push_back(HybridLabel{gt, LabelOrigin::Gt});
    }
    return out;
}

}  // namespace upcycle
