#include "upcycle/eval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace upcycle {

MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const Box3D> gts, const EvalConfig& cfg) {
    if (cfg.iou_threshold <= 0.0 || cfg.iou_threshold > 1.0) {
        throw std::invalid_argument("match_detections: threshold outside (0,1]");
    }
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        return dets[i].cls_conf > dets[j].cls_conf;
    });

    MatchResult out;
    out.scores.reserve(dets.size());
    out.tp.reserve(dets.size());
    out.gt_matched.assign(gts.size(), false);
    auto overlap = [&](const Box3D& a, const Box3D& b) {
        return cfg.metric == EvalMetric::Bev ? iou_bev(a, b) : iou_3d(a, b);
    };
    for (size_t idx : order) {
        const Detection& d = dets[idx];
        double best_iou = -1.0;
        ptrdiff_t best_gt = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (out.gt_matched[g]) continue;
            const double iou = overlap(d.box, gts[g]);
            if (iou >= cfg.iou_threshold && iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<ptrdiff_t>(g);
            }
        }
        out.scores.push_back(d.cls_conf);
        if (best_gt >= 0) {
            out.gt_matched[static_cast<size_t>(best_gt)] = true;
            out.tp.push_back(true);
        } else {
            out.tp.push_back(false);
        }
    }
    return out;
}

namespace {

double ap_from_curve(const std::vector<double>& scores, const std::vector<bool>& tp,
                     size_t num_gts, int ap_points) {
    if (ap_points < 2) throw std::invalid_argument("average_precision: ap_points < 2");
    if (num_gts == 0) return scores.empty() ? 1.0 : 0.0;
    if (scores.empty()) return 0.0;

    // Cumulative PR points in descending score order.
    std::vector<double> recall(scores.size());
    std::vector<double> precision(scores.size());
    size_t tps = 0;
    for (size_t k = 0; k < scores.size(); ++k) {
        if (tp[k]) ++tps;
        recall[k] = static_cast<double>(tps) / static_cast<double>(num_gts);
        precision[k] = static_cast<double>(tps) / static_cast<double>(k + 1);
    }
    // Interpolated precision: max precision at recall >= r.
    std::vector<double> interp(precision);
    for (size_t k = interp.size() - 1; k-- > 0;) {
        interp[k] = std::max(interp[k], interp[k + 1]);
    }
    double acc = 0.0;
    for (int j = 1; j <= ap_points; ++j) {
        const double r = static_cast<double>(j) / ap_points;
        // First PR point with recall >= r.
        double p = 0.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) {
            p = interp[static_cast<size_t>(it - recall.begin())];
        }
        acc += p;
    }
    return acc / ap_points;
}

}  // namespace

double average_precision(const MatchResult& flags, size_t num_gts,
                         const EvalConfig& cfg) {
    return ap_from_curve(flags.scores, flags.tp, num_gts, cfg.ap_points);
}

double average_precision_pooled(std::span<const MatchResult> per_scene,
                                size_t total_gts, const EvalConfig& cfg) {
    std::vector<std::pair<double, bool>> pooled;
    for (const MatchResult& m : per_scene) {
        for (size_t k = 0; k < m.scores.size(); ++k) {
            pooled.emplace_back(m.scores[k], m.tp[k]);
        }
    }
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> scores;
    std::vector<bool> tp;
    scores.reserve(pooled.size());
    tp.reserve(pooled.size());
    for (const auto& [s, t] : pooled) {
        scores.push_back(s);
        tp.push_back(t);
    }
    return ap_from_curve(scores, tp, total_gts, cfg.ap_points);
}

}  // namespace upcycle
