#include "upcycle/detector.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>

#include "upcycle/random.hpp"

namespace upcycle {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSmoothL1Beta = 1.0 / 9.0;
constexpr double kLogitCap = 30.0;
constexpr double kPositiveIou = 0.6;
constexpr double kNegativeIou = 0.45;

double cap_logit(double z) { return std::clamp(z, -kLogitCap, kLogitCap); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// loss for target 1: log(1 + e^-z); for target 0: log(1 + e^z)
double bce_pos(double z) { return std::log1p(std::exp(-z)); }
double bce_neg(double z) { return std::log1p(std::exp(z)); }

double smooth_l1(double r) {
    const double a = std::abs(r);
    if (a < kSmoothL1Beta) return 0.5 * r * r / kSmoothL1Beta;
    return a - 0.5 * kSmoothL1Beta;
}

double smooth_l1_grad(double r) {
    if (std::abs(r) < kSmoothL1Beta) return r / kSmoothL1Beta;
    return r > 0.0 ? 1.0 : -1.0;
}

double cap_gate(double z_raw) {
    return (z_raw > -kLogitCap && z_raw < kLogitCap) ? 1.0 : 0.0;
}

}  // namespace

Box3D AnchorGrid::anchor_box(size_t idx) const {
    const size_t t = idx % 2;
    const size_t cell = idx / 2;
    const auto col = static_cast<int>(cell % width);
    const auto row = static_cast<int>(cell / width);
    const double x = spec.x_min + (col + 0.5) * cell_w();
    const double y = spec.y_min + (row + 0.5) * cell_h();
    return Box3D(x, y, cfg.z_center, cfg.length, cfg.width, cfg.height,
                 t == 0 ? 0.0 : kPi / 2.0, 0);
}

AnchorGrid make_anchor_grid(const GridSpec& spec, int height, int width,
                            const AnchorConfig& cfg) {
    spec.validate();
    if (height < 1 || width < 1) {
        throw std::invalid_argument("make_anchor_grid: bad dimensions");
    }
    return AnchorGrid{spec, height, width, cfg};
}

void HeadParams::scale_add(const HeadParams& grad, double factor) {
    for (int t = 0; t < 2; ++t) {
        for (size_t i = 0; i < weights[t].size(); ++i) {
            weights[t][i] += factor * grad.weights[t][i];
        }
        for (int j = 0; j < kOutputs; ++j) bias[t][j] += factor * grad.bias[t][j];
    }
}

std::vector<double> HeadParams::flatten() const {
    std::vector<double> out;
    out.reserve(2 * (weights[0].size() + kOutputs));
    for (int t = 0; t < 2; ++t) {
        out.insert(out.end(), weights[t].begin(), weights[t].end());
        out.insert(out.end(), bias[t].begin(), bias[t].end());
    }
    return out;
}

void HeadParams::unflatten(std::span<const double> flat) {
    size_t pos = 0;
    for (int t = 0; t < 2; ++t) {
        std::copy(flat.begin() + pos, flat.begin() + pos + weights[t].size(),
                  weights[t].begin());
        pos += weights[t].size();
        std::copy(flat.begin() + pos, flat.begin() + pos + kOutputs, bias[t].begin());
        pos += kOutputs;
    }
}

HeadParams init_head(int channels, uint64_t seed) {
    if (channels < 1) throw std::invalid_argument("init_head: channels < 1");
    HeadParams p;
    p.channels = channels;
    auto rng = make_rng(derive_seed(seed, "head-init"));
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    for (int t = 0; t < 2; ++t) {
        p.weights[t].resize(static_cast<size_t>(HeadParams::kOutputs) * channels);
        for (double& w : p.weights[t]) w = u(rng);
        p.bias[t].fill(0.0);
        p.bias[t][0] = -2.0;  // start with a low objectness prior
    }
    return p;
}

HeadParams zeros_like(const HeadParams& p) {
    HeadParams z;
    z.channels = p.channels;
    for (int t = 0; t < 2; ++t) {
        z.weights[t].assign(p.weights[t].size(), 0.0);
        z.bias[t].fill(0.0);
    }
    return z;
}

Predictions head_forward(const HeadParams& p, const BevFeature& f,
                         const AnchorGrid& anchors) {
    if (p.channels != f.channels) {
        throw std::invalid_argument("head_forward: channel mismatch");
    }
    if (f.height != anchors.height || f.width != anchors.width) {
        throw std::invalid_argument("head_forward: grid mismatch");
    }
    const size_t A = anchors.count();
    Predictions out;
    out.count = A;
    out.cls_logit.resize(A);
    out.deltas.resize(A * 7);
    out.iou_logit.resize(A);
    // Bias-only fill, then overwrite anchors sitting on stored cells.
    for (size_t a = 0; a < A; ++a) {
        const int t = static_cast<int>(a % 2);
        out.cls_logit[a] = p.bias[t][0];
        for (int j = 0; j < 7; ++j) out.deltas[a * 7 + j] = p.bias[t][1 + j];
        out.iou_logit[a] = p.bias[t][8];
    }
    const int C = p.channels;
    for (size_t ci = 0; ci < f.size(); ++ci) {
        const BevIndex cell = f.cells[ci];
        const double* v = f.cell_values(ci);
        const size_t base =
            (static_cast<size_t>(cell.row) * anchors.width + cell.col) * 2;
        for (int t = 0; t < 2; ++t) {
            const size_t a = base + t;
            double z[HeadParams::kOutputs];
            for (int j = 0; j < HeadParams::kOutputs; ++j) {
                const double* w = p.weights[t].data() + static_cast<size_t>(j) * C;
                double acc = p.bias[t][j];
                for (int c = 0; c < C; ++c) acc += w[c] * v[c];
                z[j] = acc;
            }
            out.cls_logit[a] = z[0];
            for (int j = 0; j < 7; ++j) out.deltas[a * 7 + j] = z[1 + j];
            out.iou_logit[a] = z[8];
        }
    }
    return out;
}

std::array<double, 7> encode_box(const Box3D& label, const Box3D& anchor) {
    const double da = std::hypot(anchor.length, anchor.width);
    return {
        (label.cx - anchor.cx) / da,
        (label.cy - anchor.cy) / da,
        (label.cz - anchor.cz) / anchor.height,
        std::log(label.length / anchor.length),
        std::log(label.width / anchor.width),
        std::log(label.height / anchor.height),
        label.yaw - anchor.yaw,
    };
}

Box3D decode_box(std::span<const double> deltas, const Box3D& anchor) {
    const double da = std::hypot(anchor.length, anchor.width);
    auto safe_exp = [](double v) { return std::exp(std::clamp(v, -10.0, 10.0)); };
    return Box3D(anchor.cx + deltas[0] * da, anchor.cy + deltas[1] * da,
                 anchor.cz + deltas[2] * anchor.height,
                 anchor.length * safe_exp(deltas[3]), anchor.width * safe_exp(deltas[4]),
                 anchor.height * safe_exp(deltas[5]), anchor.yaw + deltas[6],
                 anchor.class_id);
}

Targets assign_targets(const AnchorGrid& anchors, std::span<const Box3D> labels) {
    const size_t A = anchors.count();
    Targets tg;
    tg.kind.assign(A, TargetKind::Negative);
    tg.deltas.assign(A * 7, 0.0);
    tg.iou_target.assign(A, 0.0);

    std::vector<double> best_iou(A, 0.0);
    std::vector<int32_t> best_label(A, -1);
    std::vector<double> label_best_iou(labels.size(), 0.0);
    std::vector<int64_t> label_best_anchor(labels.size(), -1);

    const double anchor_diag = std::hypot(anchors.cfg.length, anchors.cfg.width);
    for (size_t li = 0; li < labels.size(); ++li) {
        const Box3D& label = labels[li];
        // Positive IoU requires the centers closer than the diagonal sum.
        const double reach = 0.5 * (anchor_diag + std::hypot(label.length, label.width));
        const int col_lo = std::max(
            0, static_cast<int>(std::floor((label.cx - reach - anchors.spec.x_min) /
                                           anchors.cell_w())));
        const int col_hi = std::min(
            anchors.width - 1,
            static_cast<int>(std::ceil((label.cx + reach - anchors.spec.x_min) /
                                       anchors.cell_w())));
        const int row_lo = std::max(
            0, static_cast<int>(std::floor((label.cy - reach - anchors.spec.y_min) /
                                           anchors.cell_h())));
        const int row_hi = std::min(
            anchors.height - 1,
            static_cast<int>(std::ceil((label.cy + reach - anchors.spec.y_min) /
                                       anchors.cell_h())));
        for (int row = row_lo; row <= row_hi; ++row) {
            for (int col = col_lo; col <= col_hi; ++col) {
                const size_t base = (static_cast<size_t>(row) * anchors.width + col) * 2;
                for (size_t t = 0; t < 2; ++t) {
                    const size_t a = base + t;
                    const double iou = iou_bev(anchors.anchor_box(a), label);
                    if (iou > best_iou[a]) {
                        best_iou[a] = iou;
                        best_label[a] = static_cast<int32_t>(li);
                    }
                    if (iou > label_best_iou[li]) {
                        label_best_iou[li] = iou;
                        label_best_anchor[li] = static_cast<int64_t>(a);
                    }
                }
            }
        }
    }

    for (size_t a = 0; a < A; ++a) {
        if (best_label[a] < 0) continue;
        if (best_iou[a] >= kPositiveIou) {
            tg.kind[a] = TargetKind::Positive;
        } else if (best_iou[a] >= kNegativeIou) {
            tg.kind[a] = TargetKind::Ignored;
        }
    }
    // Force every label's best anchor positive; on contention the higher IoU
    // wins, ties keep the earlier label.
    for (size_t li = 0; li < labels.size(); ++li) {
        const int64_t a = label_best_anchor[li];
        if (a < 0 || label_best_iou[li] <= 0.0) continue;
        tg.kind[a] = TargetKind::Positive;
        if (label_best_iou[li] > best_iou[a] || best_label[a] < 0) {
            best_iou[a] = label_best_iou[li];
            best_label[a] = static_cast<int32_t>(li);
        }
    }

    for (size_t a = 0; a < A; ++a) {
        if (tg.kind[a] != TargetKind::Positive) continue;
        const Box3D& label = labels[static_cast<size_t>(best_label[a])];
        const std::array<double, 7> enc = encode_box(label, anchors.anchor_box(a));
        std::copy(enc.begin(), enc.end(), tg.deltas.begin() + static_cast<ptrdiff_t>(a) * 7);
        tg.iou_target[a] = best_iou[a];
        tg.positive_indices.push_back(a);
    }
    tg.num_positives = tg.positive_indices.size();
    return tg;
}

LossBreakdown compute_loss(const Predictions& preds, const Targets& targets) {
    if (preds.count != targets.kind.size()) {
        throw std::invalid_argument("compute_loss: size mismatch");
    }
    const double norm = static_cast<double>(std::max<size_t>(1, targets.num_positives));
    double loc = 0.0, cls = 0.0, iou = 0.0;
    for (size_t a = 0; a < preds.count; ++a) {
        const TargetKind kind = targets.kind[a];
        if (kind == TargetKind::Ignored) continue;
        const double zc = cap_logit(preds.cls_logit[a]);
        if (kind == TargetKind::Positive) {
            cls += bce_pos(zc);
            for (int j = 0; j < 7; ++j) {
                loc += smooth_l1(preds.deltas[a * 7 + j] - targets.deltas[a * 7 + j]);
            }
            const double zi = cap_logit(preds.iou_logit[a]);
            iou += smooth_l1(sigmoid(zi) - targets.iou_target[a]);
        } else {
            cls += bce_neg(zc);
        }
    }
    LossBreakdown out;
    out.loc_rpn = loc / norm;
    out.cls_rpn = cls / norm;
    out.loc_iou = iou / norm;
    out.total = out.loc_rpn + out.loc_iou + out.cls_rpn;
    return out;
}

double total_loss(const LossBreakdown& labeled, const LossBreakdown& unlabeled,
                  double w) {
    if (w < 0.0) throw std::invalid_argument("total_loss: w < 0");
    return labeled.total + w * unlabeled.total;
}

namespace {

struct AnchorLossCtx {
    double norm = 1.0;
    const Targets* targets = nullptr;
};

// Per-anchor loss terms and d(loss)/d(logits) for a single anchor whose nine
// raw outputs are z[0..8]; writes gradient into gz (scaled by 1/norm).
void anchor_loss_grad(const AnchorLossCtx& ctx, size_t a, const double* z, double* gz,
                      double* loc, double* cls, double* iou) {
    const Targets& tg = *ctx.targets;
    std::fill(gz, gz + HeadParams::kOutputs, 0.0);
    const TargetKind kind = tg.kind[a];
    if (kind == TargetKind::Ignored) return;
    const double inv = 1.0 / ctx.norm;
    const double zc = cap_logit(z[0]);
    if (kind == TargetKind::Negative) {
        *cls += bce_neg(zc) * inv;
        gz[0] = sigmoid(zc) * cap_gate(z[0]) * inv;
        return;
    }
    *cls += bce_pos(zc) * inv;
    gz[0] = (sigmoid(zc) - 1.0) * cap_gate(z[0]) * inv;
    for (int j = 0; j < 7; ++j) {
        const double r = z[1 + j] - tg.deltas[a * 7 + j];
        *loc += smooth_l1(r) * inv;
        gz[1 + j] = smooth_l1_grad(r) * inv;
    }
    const double zi = cap_logit(z[8]);
    const double si = sigmoid(zi);
    const double r = si - tg.iou_target[a];
    *iou += smooth_l1(r) * inv;
    gz[8] = smooth_l1_grad(r) * si * (1.0 - si) * cap_gate(z[8]) * inv;
}

}  // namespace

LossBreakdown head_loss_backward(const HeadParams& p, const BevFeature& f,
                                 const AnchorGrid& anchors, const Targets& targets,
                                 HeadParams* grads, std::vector<double>* feature_grad) {
    if (p.channels != f.channels) {
        throw std::invalid_argument("head_loss_backward: channel mismatch");
    }
    if (f.height != anchors.height || f.width != anchors.width) {
        throw std::invalid_argument("head_loss_backward: grid mismatch");
    }
    const size_t A = anchors.count();
    if (targets.kind.size() != A) {
        throw std::invalid_argument("head_loss_backward: target mismatch");
    }
    const int C = p.channels;
    if (grads && grads->channels != C) *grads = zeros_like(p);
    if (feature_grad) feature_grad->assign(f.values.size(), 0.0);

    AnchorLossCtx ctx;
    ctx.norm = static_cast<double>(std::max<size_t>(1, targets.num_positives));
    ctx.targets = &targets;

    double loc = 0.0, cls = 0.0, iou = 0.0;
    double z[HeadParams::kOutputs];
    double gz[HeadParams::kOutputs];

    // Anchors on stored cells: full affine outputs, weight + feature grads.
    std::vector<uint8_t> on_stored(A, 0);
    for (size_t ci = 0; ci < f.size(); ++ci) {
        const BevIndex cell = f.cells[ci];
        const double* v = f.cell_values(ci);
        const size_t base =
            (static_cast<size_t>(cell.row) * anchors.width + cell.col) * 2;
        for (int t = 0; t < 2; ++t) {
            const size_t a = base + t;
            on_stored[a] = 1;
            for (int j = 0; j < HeadParams::kOutputs; ++j) {
                const double* w = p.weights[t].data() + static_cast<size_t>(j) * C;
                double acc = p.bias[t][j];
                for (int c = 0; c < C; ++c) acc += w[c] * v[c];
                z[j] = acc;
            }
            anchor_loss_grad(ctx, a, z, gz, &loc, &cls, &iou);
            if (grads) {
                for (int j = 0; j < HeadParams::kOutputs; ++j) {
                    if (gz[j] == 0.0) continue;
                    double* dw = grads->weights[t].data() + static_cast<size_t>(j) * C;
                    for (int c = 0; c < C; ++c) dw[c] += gz[j] * v[c];
                    grads->bias[t][j] += gz[j];
                }
            }
            if (feature_grad) {
                double* gf = feature_grad->data() + ci * static_cast<size_t>(C);
                for (int j = 0; j < HeadParams::kOutputs; ++j) {
                    if (gz[j] == 0.0) continue;
                    const double* w = p.weights[t].data() + static_cast<size_t>(j) * C;
                    for (int c = 0; c < C; ++c) gf[c] += gz[j] * w[c];
                }
            }
        }
    }

    // Positives sitting on absent cells still contribute loss and bias grads.
    size_t absent_positive[2] = {0, 0};
    for (size_t a : targets.positive_indices) {
        if (on_stored[a]) continue;
        const int t = static_cast<int>(a % 2);
        ++absent_positive[t];
        z[0] = p.bias[t][0];
        for (int j = 0; j < 7; ++j) z[1 + j] = p.bias[t][1 + j];
        z[8] = p.bias[t][8];
        anchor_loss_grad(ctx, a, z, gz, &loc, &cls, &iou);
        if (grads) {
            for (int j = 0; j < HeadParams::kOutputs; ++j) {
                grads->bias[t][j] += gz[j];
            }
        }
    }

    // Remaining absent-cell anchors are all bias-only; negatives share one
    // closed-form term per type, ignored ones contribute nothing.
    size_t absent_negative[2] = {0, 0};
    for (size_t a = 0; a < A; ++a) {
        if (on_stored[a]) continue;
        if (targets.kind[a] == TargetKind::Negative) ++absent_negative[a % 2];
    }
    for (int t = 0; t < 2; ++t) {
        if (absent_negative[t] == 0) continue;
        const double n = static_cast<double>(absent_negative[t]);
        const double zc = cap_logit(p.bias[t][0]);
        cls += n * bce_neg(zc) / ctx.norm;
        if (grads) {
            grads->bias[t][0] += n * sigmoid(zc) * cap_gate(p.bias[t][0]) / ctx.norm;
        }
    }

    LossBreakdown out;
    out.loc_rpn = loc;
    out.cls_rpn = cls;
    out.loc_iou = iou;
    out.total = out.loc_rpn + out.loc_iou + out.cls_rpn;
    return out;
}

std::vector<Detection> decode_predictions(const Predictions& preds,
                                          const AnchorGrid& anchors,
                                          double score_thresh, double nms_iou) {
    if (score_thresh < 0.0 || score_thresh > 1.0 || nms_iou < 0.0 || nms_iou > 1.0) {
        throw std::invalid_argument("decode_predictions: thresholds outside [0,1]");
    }
    std::vector<Detection> dets;
    for (size_t a = 0; a < preds.count; ++a) {
        const double score = sigmoid(preds.cls_logit[a]);
        if (score < score_thresh) continue;
        const Box3D box = decode_box(
            std::span<const double>(preds.deltas.data() + a * 7, 7),
            anchors.anchor_box(a));
        dets.emplace_back(box, score, sigmoid(preds.iou_logit[a]));
    }
    return nms_bev(dets, nms_iou);
}

std::pair<HeadParams, LossBreakdown> train_step(const HeadParams& p,
                                                std::span<const TrainItem> batch,
                                                const AnchorGrid& anchors, double lr) {
    if (lr < 0.0) throw std::invalid_argument("train_step: lr < 0");
    if (batch.empty()) return {p, LossBreakdown{}};

    struct ItemResult {
        HeadParams grads;
        LossBreakdown loss;
    };
    std::vector<ItemResult> results(batch.size());
    auto eval_item = [&](size_t i) {
        const TrainItem& item = batch[i];
        const Targets tg = assign_targets(anchors, item.labels);
        results[i].grads = zeros_like(p);
        results[i].loss =
            head_loss_backward(p, *item.feature, anchors, tg, &results[i].grads, nullptr);
    };
    if (batch.size() > 1) {
        std::vector<std::future<void>> futs;
        futs.reserve(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
            futs.push_back(std::async(std::launch::async, eval_item, i));
        }
        for (auto& fut : futs) fut.get();
    } else {
        eval_item(0);
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    HeadParams mean_grad = zeros_like(p);
    LossBreakdown mean_loss;
    for (const ItemResult& r : results) {
        mean_grad.scale_add(r.grads, inv);
        mean_loss.loc_rpn += r.loss.loc_rpn * inv;
        mean_loss.cls_rpn += r.loss.cls_rpn * inv;
        mean_loss.loc_iou += r.loss.loc_iou * inv;
    }
    mean_loss.total = mean_loss.loc_rpn + mean_loss.loc_iou + mean_loss.cls_rpn;
    HeadParams next = p;
    next.scale_add(mean_grad, -lr);
    return {std::move(next), mean_loss};
}

}  // namespace upcycle
