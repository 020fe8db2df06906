#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "upcycle/geometry.hpp"
#include "upcycle/voxelgrid.hpp"

namespace upcycle {

// Fixed car prior, two yaw hypotheses (0 and pi/2) per BEV cell.
struct AnchorConfig {
    double length = 3.9;
    double width = 1.6;
    double height = 1.56;
    double z_center = -0.82;
};

struct AnchorGrid {
    GridSpec spec;
    int height = 0;
    int width = 0;
    AnchorConfig cfg;

    size_t count() const { return static_cast<size_t>(height) * width * 2; }
    // Anchor index layout: ((row * width) + col) * 2 + yaw_type.
    Box3D anchor_box(size_t idx) const;
    double cell_w() const { return (spec.x_max - spec.x_min) / width; }
    double cell_h() const { return (spec.y_max - spec.y_min) / height; }
};

AnchorGrid make_anchor_grid(const GridSpec& spec, int height, int width,
                            const AnchorConfig& cfg = {});

// Affine head per yaw hypothesis: C-dim cell vector -> 9 outputs
// (cls logit, 7 box deltas, iou logit).
struct HeadParams {
    static constexpr int kOutputs = 9;
    int channels = 0;
    std::array<std::vector<double>, 2> weights;  // kOutputs * channels each
    std::array<std::array<double, kOutputs>, 2> bias{};

    void scale_add(const HeadParams& grad, double factor);  // this += factor * grad
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);
};

HeadParams init_head(int channels, uint64_t seed);
HeadParams zeros_like(const HeadParams& p);

struct Predictions {
    size_t count = 0;
    std::vector<double> cls_logit;  // [A]
    std::vector<double> deltas;     // [A * 7]
    std::vector<double> iou_logit;  // [A]
};

// Affine map per stored cell; anchors over absent cells see a zero feature
// vector and therefore produce bias-only outputs.
Predictions head_forward(const HeadParams& p, const BevFeature& f,
                         const AnchorGrid& anchors);

enum class TargetKind : uint8_t { Negative = 0, Positive = 1, Ignored = 2 };

struct Targets {
    std::vector<TargetKind> kind;    // [A]
    std::vector<double> deltas;      // [A * 7], valid for positives
    std::vector<double> iou_target;  // [A], valid for positives
    std::vector<size_t> positive_indices;
    size_t num_positives = 0;
};

// BEV-IoU anchor matching: positive at >= 0.6, negative below 0.45, ignored
// between; each label's best anchor is forced positive.
Targets assign_targets(const AnchorGrid& anchors, std::span<const Box3D> labels);

// Standard box encoding against an anchor: x/y offsets over the anchor
// diagonal, z offset over the height, log dim ratios, direct yaw difference.
std::array<double, 7> encode_box(const Box3D& label, const Box3D& anchor);
Box3D decode_box(std::span<const double> deltas, const Box3D& anchor);

struct LossBreakdown {
    double loc_rpn = 0.0;
    double cls_rpn = 0.0;
    double loc_iou = 0.0;
    double total = 0.0;
};

// Smooth-L1 (beta = 1/9) box and IoU regression plus sigmoid BCE
// classification, each normalized by max(1, #positives).
LossBreakdown compute_loss(const Predictions& preds, const Targets& targets);

double total_loss(const LossBreakdown& labeled, const LossBreakdown& unlabeled,
                  double w);

// Fused loss + analytic gradients. `feature_grad`, when non-null, receives
// d(loss)/d(feature values) aligned with f.values (resized and zeroed here).
LossBreakdown head_loss_backward(const HeadParams& p, const BevFeature& f,
                                 const AnchorGrid& anchors, const Targets& targets,
                                 HeadParams* grads, std::vector<double>* feature_grad);

std::vector<Detection> decode_predictions(const Predictions& preds,
                                          const AnchorGrid& anchors,
                                          double score_thresh, double nms_iou);

struct TrainItem {
    const BevFeature* feature = nullptr;
    std::vector<Box3D> labels;
};

// One gradient-descent update over the batch-mean loss. Items may be
// evaluated concurrently; gradients are reduced in item order so results are
// bit-stable for any thread count.
std::pair<HeadParams, LossBreakdown> train_step(const HeadParams& p,
                                                std::span<const TrainItem> batch,
                                                const AnchorGrid& anchors, double lr);

}  // namespace upcycle
