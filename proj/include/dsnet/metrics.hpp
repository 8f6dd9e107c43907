#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsnet/box.hpp"

namespace dsnet {

struct GroundTruth {
    Box box;
    int class_id = 0;
};

// One image's detections and ground truths. A dataset is a vector of these,
// aggregated in index (image-id) order.
struct ImageSample {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
};
using Dataset = std::vector<ImageSample>;

// Greedy matching for one image: per class, detections sorted by score
// descending each claim the unmatched ground truth of that class with the
// highest IoU >= threshold (IoU ties go to the lower ground-truth index).
// Unmatched detections are FP, unmatched ground truths FN.
struct MatchResult {
    std::vector<bool> det_is_tp;      // aligned with the input detection order
    std::vector<int> det_matched_gt;  // claimed gt index, -1 for FP
    std::vector<bool> gt_matched;
    double iou_threshold = 0.0;

    long tp() const;
    long fp() const;
    long fn() const;
};

MatchResult match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                  double iou_threshold);

// Zero denominators return 0 by convention.
double precision(long tp, long fp);
double recall(long tp, long fn);
double f1(double p, double r);

struct PRPoint {
    double recall = 0.0;
    double precision = 0.0;
};

// Cumulative (recall, precision) points from the descending-score sweep and
// the all-point-interpolated area under them (precision envelope made
// monotone non-increasing from the right, integrated over recall). Equal
// scores are folded into one sweep step so the curve depends on ranks only.
struct PRCurve {
    std::vector<PRPoint> points;
    double ap = 0.0;
    bool has_gt = false;  // false → no ground truth for this class, ap forced 0
};

PRCurve average_precision(const Dataset& data, int class_id, double iou_threshold);

// AP at the ten thresholds 0.50, 0.55, ..., 0.95 (generated as (10+i)/20 so
// e.g. 0.60 compares exactly against an IoU that is exactly 0.6).
struct ApSweep {
    double ap50 = 0.0;
    double ap75 = 0.0;
    double ap50_95 = 0.0;
};

ApSweep ap_sweep(const Dataset& data, int class_id);

// AP at IoU 0.5 restricted to the small / medium / large pixel-area buckets
// (edges 32*32 and 96*96). Both ground truths and detections are bucketed by
// their own area, so out-of-bucket detections are ignored, not penalized.
// A bucket with no ground truth reports no value.
struct SizeStratifiedAp {
    std::optional<double> ap_small;
    std::optional<double> ap_medium;
    std::optional<double> ap_large;
};

SizeStratifiedAp size_stratified_ap(const Dataset& data, int class_id);

// Arithmetic mean; rejects an empty list.
double mean_ap(std::span<const double> per_class_ap);

struct ClassMetrics {
    int class_id = 0;
    bool has_gt = false;
    // operating point: detections at or above the report's score threshold,
    // matched at the report's IoU threshold
    long tp = 0, fp = 0, fn = 0;
    double p = 0.0, r = 0.0, f1 = 0.0;
    double ap = 0.0;  // at the report's IoU threshold, all detections
    double ap50 = 0.0, ap75 = 0.0, ap50_95 = 0.0;
    SizeStratifiedAp size_ap;
    PRCurve curve;  // at the report's IoU threshold
};

// mAP values average the classes that have ground truth; classes without any
// are reported but excluded from aggregates. The aggregate P/R/F1 row pools
// TP/FP/FN over all classes.
struct MetricsReport {
    double iou_threshold = 0.5;
    double score_threshold = 0.25;
    std::vector<ClassMetrics> per_class;
    double map = 0.0;        // mean of per-class ap
    double map50_95 = 0.0;   // mean of per-class ap50_95
    long tp = 0, fp = 0, fn = 0;
    double p = 0.0, r = 0.0, f1 = 0.0;
};

// Throws when no class has any ground truth.
MetricsReport evaluate(const Dataset& data, int num_classes, double iou_threshold,
                       double score_threshold);

// Human-readable table. class_names (optional) must cover every class id.
void write_report(std::ostream& os, const MetricsReport& rep,
                  std::span<const std::string> class_names = {});
// Machine-readable "key = value" lines, keys by class id.
void write_report_kv(std::ostream& os, const MetricsReport& rep);
// Two-column CSV: recall,precision.
void write_pr_csv(std::ostream& os, const PRCurve& curve);

}  // namespace dsnet
