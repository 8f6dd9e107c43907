#include "dsnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "dsnet/textfmt.hpp"

namespace dsnet {

long MatchResult::tp() const {
    return std::count(det_is_tp.begin(), det_is_tp.end(), true);
}

long MatchResult::fp() const {
    return static_cast<long>(det_is_tp.size()) - tp();
}

long MatchResult::fn() const {
    return std::count(gt_matched.begin(), gt_matched.end(), false);
}

MatchResult match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                  double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("match: iou threshold must lie in (0,1)");
    MatchResult m;
    m.iou_threshold = iou_threshold;
    m.det_is_tp.assign(dets.size(), false);
    m.det_matched_gt.assign(dets.size(), -1);
    m.gt_matched.assign(gts.size(), false);

    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });

    for (std::size_t i : order) {
        const Detection& d = dets[i];
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (m.gt_matched[g] || gts[g].class_id != d.class_id) continue;
            const double v = iou(d.box, gts[g].box);
            if (v < iou_threshold) continue;
            if (v > best_iou) {  // strict: IoU ties keep the lower gt index
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            m.det_is_tp[i] = true;
            m.det_matched_gt[i] = best;
            m.gt_matched[static_cast<std::size_t>(best)] = true;
        }
    }
    return m;
}

double precision(long tp, long fp) {
    if (tp < 0 || fp < 0) throw std::invalid_argument("precision: negative count");
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall(long tp, long fn) {
    if (tp < 0 || fn < 0) throw std::invalid_argument("recall: negative count");
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double f1(double p, double r) {
    if (p < 0.0 || p > 1.0 || r < 0.0 || r > 1.0)
        throw std::invalid_argument("f1: rates must lie in [0,1]");
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

namespace {

struct ScoredFlag {
    float score;
    bool tp;
};

// Cumulative sweep points; equal scores form a single step so the curve is a
// function of the ranking only.
std::vector<PRPoint> sweep_points(std::vector<ScoredFlag> pool, std::size_t n_gt) {
    std::sort(pool.begin(), pool.end(),
              [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
    std::vector<PRPoint> points;
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < pool.size()) {
        std::size_t j = i;
        while (j < pool.size() && pool[j].score == pool[i].score) {
            if (pool[j].tp) ++tp; else ++fp;
            ++j;
        }
        points.push_back({n_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(n_gt),
                          static_cast<double>(tp) / static_cast<double>(tp + fp)});
        i = j;
    }
    return points;
}

// all-point interpolation: right-to-left precision envelope, integrated over
// the recall increments
double envelope_area(const std::vector<PRPoint>& points) {
    std::vector<double> env(points.size());
    double maxp = 0.0;
    for (std::size_t i = points.size(); i-- > 0;) {
        maxp = std::max(maxp, points[i].precision);
        env[i] = maxp;
    }
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        ap += (points[i].recall - prev_r) * env[i];
        prev_r = points[i].recall;
    }
    return ap;
}

}  // namespace

PRCurve average_precision(const Dataset& data, int class_id, double iou_threshold) {
    if (class_id < 0) throw std::invalid_argument("average_precision: negative class id");
    std::vector<ScoredFlag> pool;
    std::size_t n_gt = 0;
    for (const ImageSample& img : data) {
        std::vector<Detection> dets;
        std::vector<GroundTruth> gts;
        for (const auto& d : img.dets)
            if (d.class_id == class_id) dets.push_back(d);
        for (const auto& g : img.gts)
            if (g.class_id == class_id) gts.push_back(g);
        const MatchResult m = match(dets, gts, iou_threshold);
        for (std::size_t i = 0; i < dets.size(); ++i)
            pool.push_back({dets[i].score, static_cast<bool>(m.det_is_tp[i])});
        n_gt += gts.size();
    }
    PRCurve curve;
    curve.has_gt = n_gt > 0;
    curve.points = sweep_points(std::move(pool), n_gt);
    curve.ap = curve.has_gt ? envelope_area(curve.points) : 0.0;
    return curve;
}

ApSweep ap_sweep(const Dataset& data, int class_id) {
    ApSweep s;
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double thr = static_cast<double>(10 + i) / 20.0;
        const double ap = average_precision(data, class_id, thr).ap;
        if (i == 0) s.ap50 = ap;
        if (i == 5) s.ap75 = ap;
        sum += ap;
    }
    s.ap50_95 = sum / 10.0;
    return s;
}

namespace {

int area_bucket(float area) {
    if (area < 32.0f * 32.0f) return 0;
    if (area < 96.0f * 96.0f) return 1;
    return 2;
}

}  // namespace

SizeStratifiedAp size_stratified_ap(const Dataset& data, int class_id) {
    SizeStratifiedAp out;
    for (int bucket = 0; bucket < 3; ++bucket) {
        Dataset filtered;
        filtered.reserve(data.size());
        for (const ImageSample& img : data) {
            ImageSample f;
            for (const auto& d : img.dets)
                if (area_bucket(d.box.area()) == bucket) f.dets.push_back(d);
            for (const auto& g : img.gts)
                if (area_bucket(g.box.area()) == bucket) f.gts.push_back(g);
            filtered.push_back(std::move(f));
        }
        const PRCurve curve = average_precision(filtered, class_id, 0.5);
        if (!curve.has_gt) continue;
        if (bucket == 0) out.ap_small = curve.ap;
        else if (bucket == 1) out.ap_medium = curve.ap;
        else out.ap_large = curve.ap;
    }
    return out;
}

double mean_ap(std::span<const double> per_class_ap) {
    if (per_class_ap.empty()) throw std::invalid_argument("mean_ap: empty class list");
    double sum = 0.0;
    for (double v : per_class_ap) sum += v;
    return sum / static_cast<double>(per_class_ap.size());
}

MetricsReport evaluate(const Dataset& data, int num_classes, double iou_threshold,
                       double score_threshold) {
    if (num_classes <= 0) throw std::invalid_argument("evaluate: class count must be positive");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("evaluate: iou threshold must lie in (0,1)");
    if (score_threshold < 0.0 || score_threshold > 1.0)
        throw std::invalid_argument("evaluate: score threshold must lie in [0,1]");
    for (const ImageSample& img : data) {
        for (const auto& d : img.dets)
            if (d.class_id < 0 || d.class_id >= num_classes)
                throw std::invalid_argument("evaluate: detection class id " +
                                            std::to_string(d.class_id) + " out of range");
        for (const auto& g : img.gts)
            if (g.class_id < 0 || g.class_id >= num_classes)
                throw std::invalid_argument("evaluate: ground-truth class id " +
                                            std::to_string(g.class_id) + " out of range");
    }

    MetricsReport rep;
    rep.iou_threshold = iou_threshold;
    rep.score_threshold = score_threshold;
    std::vector<double> aps, aps5095;
    for (int c = 0; c < num_classes; ++c) {
        ClassMetrics cm;
        cm.class_id = c;
        cm.curve = average_precision(data, c, iou_threshold);
        cm.ap = cm.curve.ap;
        cm.has_gt = cm.curve.has_gt;
        const ApSweep sweep = ap_sweep(data, c);
        cm.ap50 = sweep.ap50;
        cm.ap75 = sweep.ap75;
        cm.ap50_95 = sweep.ap50_95;
        cm.size_ap = size_stratified_ap(data, c);

        for (const ImageSample& img : data) {
            std::vector<Detection> dets;
            std::vector<GroundTruth> gts;
            for (const auto& d : img.dets)
                if (d.class_id == c && d.score >= score_threshold) dets.push_back(d);
            for (const auto& g : img.gts)
                if (g.class_id == c) gts.push_back(g);
            const MatchResult m = match(dets, gts, iou_threshold);
            cm.tp += m.tp();
            cm.fp += m.fp();
            cm.fn += m.fn();
        }
        cm.p = precision(cm.tp, cm.fp);
        cm.r = recall(cm.tp, cm.fn);
        cm.f1 = f1(cm.p, cm.r);

        rep.tp += cm.tp;
        rep.fp += cm.fp;
        rep.fn += cm.fn;
        if (cm.has_gt) {
            aps.push_back(cm.ap);
            aps5095.push_back(cm.ap50_95);
        }
        rep.per_class.push_back(std::move(cm));
    }
    if (aps.empty()) throw std::invalid_argument("evaluate: dataset has no ground truth");
    rep.map = mean_ap(aps);
    rep.map50_95 = mean_ap(aps5095);
    rep.p = precision(rep.tp, rep.fp);
    rep.r = recall(rep.tp, rep.fn);
    rep.f1 = f1(rep.p, rep.r);
    return rep;
}

namespace {

std::string opt_cell(const std::optional<double>& v) {
    char buf[32];
    if (!v) return "       -";
    std::snprintf(buf, sizeof buf, "%8.4f", *v);
    return buf;
}

}  // namespace

void write_report(std::ostream& os, const MetricsReport& rep,
                  std::span<const std::string> class_names) {
    if (!class_names.empty() && class_names.size() < rep.per_class.size())
        throw std::invalid_argument("write_report: class name list too short");
    os << "detection metrics (iou >= " << fmt_fixed(rep.iou_threshold, 2) << ", score >= "
       << fmt_fixed(rep.score_threshold, 2) << ")\n\n";
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%-10s %6s %6s %6s %6s %8s %8s %8s %8s %8s %8s %8s %8s %8s %8s\n", "class", "gt",
                  "tp", "fp", "fn", "prec", "recall", "f1", "ap", "ap50", "ap75", "ap50:95", "ap_s",
                  "ap_m", "ap_l");
    os << buf;
    for (const ClassMetrics& cm : rep.per_class) {
        const std::string name = class_names.empty()
                                     ? "c" + std::to_string(cm.class_id)
                                     : class_names[static_cast<std::size_t>(cm.class_id)];
        if (!cm.has_gt) {
            std::snprintf(buf, sizeof buf, "%-10s %6ld %6ld %6ld %6ld %s\n", name.c_str(),
                          cm.tp + cm.fn, cm.tp, cm.fp, cm.fn, "   (no ground truth)");
            os << buf;
            continue;
        }
        std::snprintf(buf, sizeof buf,
                      "%-10s %6ld %6ld %6ld %6ld %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %s %s %s\n",
                      name.c_str(), cm.tp + cm.fn, cm.tp, cm.fp, cm.fn, cm.p, cm.r, cm.f1, cm.ap,
                      cm.ap50, cm.ap75, cm.ap50_95, opt_cell(cm.size_ap.ap_small).c_str(),
                      opt_cell(cm.size_ap.ap_medium).c_str(), opt_cell(cm.size_ap.ap_large).c_str());
        os << buf;
    }
    os << '\n';
    std::snprintf(buf, sizeof buf, "%-10s %6ld %6ld %6ld %6ld %8.4f %8.4f %8.4f\n", "all",
                  rep.tp + rep.fn, rep.tp, rep.fp, rep.fn, rep.p, rep.r, rep.f1);
    os << buf;
    os << "map = " << fmt_fixed(rep.map, 6) << "  (iou " << fmt_fixed(rep.iou_threshold, 2)
       << ")\nmap50:95 = " << fmt_fixed(rep.map50_95, 6) << '\n';
    if (!os) throw std::runtime_error("write_report: write failed");
}

void write_report_kv(std::ostream& os, const MetricsReport& rep) {
    os << "iou_threshold = " << fmt_g9(rep.iou_threshold) << '\n';
    os << "score_threshold = " << fmt_g9(rep.score_threshold) << '\n';
    os << "classes = " << rep.per_class.size() << '\n';
    for (const ClassMetrics& cm : rep.per_class) {
        const std::string k = "class." + std::to_string(cm.class_id) + ".";
        os << k << "has_gt = " << (cm.has_gt ? 1 : 0) << '\n';
        os << k << "gt = " << cm.tp + cm.fn << '\n';
        os << k << "tp = " << cm.tp << '\n';
        os << k << "fp = " << cm.fp << '\n';
        os << k << "fn = " << cm.fn << '\n';
        os << k << "precision = " << fmt_g9(cm.p) << '\n';
        os << k << "recall = " << fmt_g9(cm.r) << '\n';
        os << k << "f1 = " << fmt_g9(cm.f1) << '\n';
        if (cm.has_gt) {
            os << k << "ap = " << fmt_g9(cm.ap) << '\n';
            os << k << "ap50 = " << fmt_g9(cm.ap50) << '\n';
            os << k << "ap75 = " << fmt_g9(cm.ap75) << '\n';
            os << k << "ap50_95 = " << fmt_g9(cm.ap50_95) << '\n';
            if (cm.size_ap.ap_small) os << k << "ap_small = " << fmt_g9(*cm.size_ap.ap_small) << '\n';
            if (cm.size_ap.ap_medium) os << k << "ap_medium = " << fmt_g9(*cm.size_ap.ap_medium) << '\n';
            if (cm.size_ap.ap_large) os << k << "ap_large = " << fmt_g9(*cm.size_ap.ap_large) << '\n';
        }
    }
    os << "overall.tp = " << rep.tp << '\n';
    os << "overall.fp = " << rep.fp << '\n';
    os << "overall.fn = " << rep.fn << '\n';
    os << "overall.precision = " << fmt_g9(rep.p) << '\n';
    os << "overall.recall = " << fmt_g9(rep.r) << '\n';
    os << "overall.f1 = " << fmt_g9(rep.f1) << '\n';
    os << "overall.map = " << fmt_g9(rep.map) << '\n';
    os << "overall.map50_95 = " << fmt_g9(rep.map50_95) << '\n';
    if (!os) throw std::runtime_error("write_report_kv: write failed");
}

void write_pr_csv(std::ostream& os, const PRCurve& curve) {
    os << "recall,precision\n";
    for (const PRPoint& p : curve.points)
        os << fmt_g9(p.recall) << ',' << fmt_g9(p.precision) << '\n';
    if (!os) throw std::runtime_error("write_pr_csv: write failed");
}

}  // namespace dsnet
