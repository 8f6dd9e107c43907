#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dsnet {

// Axis-aligned box in center form. Units are whatever the caller uses
// (pixels or normalized), as long as both operands of a call agree. Storage
// is f32; derived corners are computed in f64 so geometry built on them is a
// smooth function of the stored fields (no intermediate rounding).
struct Box {
    float cx = 0.0f, cy = 0.0f;
    float w = 0.0f, h = 0.0f;  // strictly positive

    double x1() const { return cx - 0.5 * static_cast<double>(w); }
    double y1() const { return cy - 0.5 * static_cast<double>(h); }
    double x2() const { return cx + 0.5 * static_cast<double>(w); }
    double y2() const { return cy + 0.5 * static_cast<double>(h); }
    double area() const { return static_cast<double>(w) * h; }

    static Box from_corners(float x1, float y1, float x2, float y2);
};

// Throws std::invalid_argument when w or h is not strictly positive.
void validate_box(const Box& b, const char* who);

struct Detection {
    Box box;
    int class_id = 0;
    float score = 0.0f;  // in [0,1]
};

// Intersection over union, in [0,1]; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

// Generalized IoU: iou - (enclosing area - union) / enclosing area, in (-1,1].
double giou(const Box& a, const Box& b);

// Distance IoU: iou - center_dist^2 / enclosing_diagonal^2, in (-1,1].
double diou(const Box& a, const Box& b);

// Aspect-ratio consistency penalty:
// (4/pi^2) * (atan(w_gt/h_gt) - atan(w_pred/h_pred))^2, in [0,1).
double aspect_consistency(const Box& pred, const Box& gt);

// Complete-IoU regression loss:
//   1 + beta*xi + center_dist^2 / eta^2 - iou
// with xi = aspect_consistency, beta = xi / ((1 - iou) + xi) (0 when the
// denominator vanishes), and eta = the longest side of the smallest box
// enclosing both operands. Zero iff the boxes are identical.
double ciou_loss(const Box& pred, const Box& gt);

// d(ciou_loss)/d(pred.cx, pred.cy, pred.w, pred.h), differentiating the full
// closed form including the aspect trade-off weight's dependence on IoU and
// the aspect term (so it matches central differences away from kinks).
// min/max kinks take one-sided derivatives: at a tie the gt branch is
// considered active, so the pred-side derivative is 0 there; an
// enclosing-extent tie resolves to the width branch. With pred == gt this
// yields (0, 0, 1/w, 1/h).
std::array<double, 4> ciou_gradient(const Box& pred, const Box& gt);

// Grid-cell confidence: pr_obj in {0,1} times the IoU with the ground truth.
double confidence(int pr_obj, double iou_value);

// Greedy per-class non-maximum suppression. Candidates are visited by score
// descending (ties: smaller class id, then input order); one is kept iff its
// IoU with every already-kept detection of the same class is <= threshold.
// Boxes of different classes never suppress each other. Output in kept order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

// Detections interchange: tab-separated text, one record per line in the
// order image_id, class_id, score, cx, cy, w, h. Lines starting with '#' and
// blank lines are ignored; the writer emits one '#' header line. Floats are
// printed with 9 significant digits so a read-back reproduces them exactly.
struct DetectionRecord {
    std::string image_id;
    Detection det;
};

void write_detections(std::ostream& os, std::span<const DetectionRecord> records);
std::vector<DetectionRecord> read_detections(std::istream& is);
void save_detections(const std::string& path, std::span<const DetectionRecord> records);
std::vector<DetectionRecord> load_detections(const std::string& path);

}  // namespace dsnet
