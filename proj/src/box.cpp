#include "dsnet/box.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "dsnet/textfmt.hpp"

namespace dsnet {

Box Box::from_corners(float x1, float y1, float x2, float y2) {
    if (!(x1 < x2) || !(y1 < y2))
        throw std::invalid_argument("box: corners must satisfy x1 < x2 and y1 < y2");
    return Box{0.5f * (x1 + x2), 0.5f * (y1 + y2), x2 - x1, y2 - y1};
}

void validate_box(const Box& b, const char* who) {
    if (!(b.w > 0.0f) || !(b.h > 0.0f))
        throw std::invalid_argument(std::string(who) + ": box extents must be strictly positive");
}

namespace {

struct Overlap {
    double inter;
    double uni;
};

// Intersection/union in double from the float corner form. Both areas come
// from the same corner differences as the intersection so that a box against
// itself gives inter == uni bitwise (and IoU exactly 1).
Overlap overlap(const Box& a, const Box& b) {
    const double aw = static_cast<double>(a.x2()) - a.x1();
    const double ah = static_cast<double>(a.y2()) - a.y1();
    const double bw = static_cast<double>(b.x2()) - b.x1();
    const double bh = static_cast<double>(b.y2()) - b.y1();
    const double iw = std::min<double>(a.x2(), b.x2()) - std::max<double>(a.x1(), b.x1());
    const double ih = std::min<double>(a.y2(), b.y2()) - std::max<double>(a.y1(), b.y1());
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = aw * ah + bw * bh - inter;
    return {inter, uni};
}

}  // namespace

double iou(const Box& a, const Box& b) {
    validate_box(a, "iou");
    validate_box(b, "iou");
    const Overlap o = overlap(a, b);
    return o.inter / o.uni;
}

double giou(const Box& a, const Box& b) {
    validate_box(a, "giou");
    validate_box(b, "giou");
    const Overlap o = overlap(a, b);
    const double ew = std::max<double>(a.x2(), b.x2()) - std::min<double>(a.x1(), b.x1());
    const double eh = std::max<double>(a.y2(), b.y2()) - std::min<double>(a.y1(), b.y1());
    const double enclose = ew * eh;
    return o.inter / o.uni - (enclose - o.uni) / enclose;
}

double diou(const Box& a, const Box& b) {
    validate_box(a, "diou");
    validate_box(b, "diou");
    const Overlap o = overlap(a, b);
    const double ew = std::max<double>(a.x2(), b.x2()) - std::min<double>(a.x1(), b.x1());
    const double eh = std::max<double>(a.y2(), b.y2()) - std::min<double>(a.y1(), b.y1());
    const double dx = static_cast<double>(a.cx) - b.cx;
    const double dy = static_cast<double>(a.cy) - b.cy;
    return o.inter / o.uni - (dx * dx + dy * dy) / (ew * ew + eh * eh);
}

double aspect_consistency(const Box& pred, const Box& gt) {
    validate_box(pred, "aspect_consistency");
    validate_box(gt, "aspect_consistency");
    const double d = std::atan(static_cast<double>(gt.w) / gt.h) -
                     std::atan(static_cast<double>(pred.w) / pred.h);
    return 4.0 / (std::numbers::pi * std::numbers::pi) * d * d;
}

double ciou_loss(const Box& pred, const Box& gt) {
    validate_box(pred, "ciou_loss");
    validate_box(gt, "ciou_loss");
    const Overlap o = overlap(pred, gt);
    const double v = o.inter / o.uni;
    const double xi = aspect_consistency(pred, gt);
    const double denom = (1.0 - v) + xi;
    const double beta_xi = denom > 0.0 ? xi * xi / denom : 0.0;
    const double dx = static_cast<double>(pred.cx) - gt.cx;
    const double dy = static_cast<double>(pred.cy) - gt.cy;
    const double ew = std::max<double>(pred.x2(), gt.x2()) - std::min<double>(pred.x1(), gt.x1());
    const double eh = std::max<double>(pred.y2(), gt.y2()) - std::min<double>(pred.y1(), gt.y1());
    const double eta = std::max(ew, eh);
    return 1.0 + beta_xi + (dx * dx + dy * dy) / (eta * eta) - v;
}

std::array<double, 4> ciou_gradient(const Box& pred, const Box& gt) {
    validate_box(pred, "ciou_gradient");
    validate_box(gt, "ciou_gradient");
    const double x1p = pred.x1(), x2p = pred.x2(), y1p = pred.y1(), y2p = pred.y2();
    const double x1g = gt.x1(), x2g = gt.x2(), y1g = gt.y1(), y2g = gt.y2();
    const double wp = pred.w, hp = pred.h;

    const double iw = std::min(x2p, x2g) - std::max(x1p, x1g);
    const double ih = std::min(y2p, y2g) - std::max(y1p, y1g);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = (x2p - x1p) * (y2p - y1p) + (x2g - x1g) * (y2g - y1g) - inter;
    const double v = inter / uni;

    // one-sided min/max rule: at ties the gt corner is the active one
    double dI_dcx = 0.0, dI_dcy = 0.0, dI_dw = 0.0, dI_dh = 0.0;
    if (inter > 0.0) {
        const double d_x2 = x2p < x2g ? ih : 0.0;   // d inter / d x2p
        const double d_x1 = x1p > x1g ? -ih : 0.0;  // d inter / d x1p
        const double d_y2 = y2p < y2g ? iw : 0.0;
        const double d_y1 = y1p > y1g ? -iw : 0.0;
        dI_dcx = d_x1 + d_x2;
        dI_dcy = d_y1 + d_y2;
        dI_dw = 0.5 * (d_x2 - d_x1);
        dI_dh = 0.5 * (d_y2 - d_y1);
    }
    const double dA_dw = hp, dA_dh = wp;  // pred area derivatives

    const auto div_grad = [&](double dI, double dA) {
        const double dU = dA - dI;
        return (dI * uni - inter * dU) / (uni * uni);
    };
    const double div_dcx = div_grad(dI_dcx, 0.0);
    const double div_dcy = div_grad(dI_dcy, 0.0);
    const double div_dw = div_grad(dI_dw, dA_dw);
    const double div_dh = div_grad(dI_dh, dA_dh);

    // enclosing extents; ties resolve to the gt corner, extent tie to width
    const double ew = std::max(x2p, x2g) - std::min(x1p, x1g);
    const double eh = std::max(y2p, y2g) - std::min(y1p, y1g);
    const double dew_x2 = x2p > x2g ? 1.0 : 0.0;
    const double dew_x1 = x1p < x1g ? -1.0 : 0.0;
    const double deh_y2 = y2p > y2g ? 1.0 : 0.0;
    const double deh_y1 = y1p < y1g ? -1.0 : 0.0;
    const double dew_dcx = dew_x1 + dew_x2, dew_dw = 0.5 * (dew_x2 - dew_x1);
    const double deh_dcy = deh_y1 + deh_y2, deh_dh = 0.5 * (deh_y2 - deh_y1);
    const double eta = std::max(ew, eh);
    const bool wide = ew >= eh;
    const double deta_dcx = wide ? dew_dcx : 0.0;
    const double deta_dcy = wide ? 0.0 : deh_dcy;
    const double deta_dw = wide ? dew_dw : 0.0;
    const double deta_dh = wide ? 0.0 : deh_dh;

    const double dx = static_cast<double>(pred.cx) - gt.cx;
    const double dy = static_cast<double>(pred.cy) - gt.cy;
    const double rho2 = dx * dx + dy * dy;
    const double eta2 = eta * eta;
    const auto center_grad = [&](double drho2, double deta) {
        return drho2 / eta2 - 2.0 * rho2 * deta / (eta2 * eta);
    };

    const double diff = std::atan(static_cast<double>(gt.w) / gt.h) - std::atan(wp / hp);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    const double dxi_dw = -8.0 / pi2 * diff * hp / (wp * wp + hp * hp);
    const double dxi_dh = 8.0 / pi2 * diff * wp / (wp * wp + hp * hp);

    const double xi = 4.0 / pi2 * diff * diff;
    const double denom = (1.0 - v) + xi;

    // full chain through the aspect trade-off weight: with b = xi/denom,
    // d(b*xi) = b*dxi + xi*db where db = (dxi*(1-v) + xi*dv) / denom^2.
    // denom is 0 only for coincident boxes, where every factor vanishes.
    const auto tradeoff_grad = [&](double dxi, double dv) {
        if (denom <= 0.0) return 0.0;
        const double db = (dxi * (1.0 - v) + xi * dv) / (denom * denom);
        return xi / denom * dxi + xi * db;
    };

    return {
        -div_dcx + center_grad(2.0 * dx, deta_dcx) + tradeoff_grad(0.0, div_dcx),
        -div_dcy + center_grad(2.0 * dy, deta_dcy) + tradeoff_grad(0.0, div_dcy),
        -div_dw + center_grad(0.0, deta_dw) + tradeoff_grad(dxi_dw, div_dw),
        -div_dh + center_grad(0.0, deta_dh) + tradeoff_grad(dxi_dh, div_dh),
    };
}

double confidence(int pr_obj, double iou_value) {
    if (pr_obj != 0 && pr_obj != 1)
        throw std::invalid_argument("confidence: objectness indicator must be 0 or 1");
    if (iou_value < 0.0 || iou_value > 1.0)
        throw std::invalid_argument("confidence: iou must lie in [0,1]");
    return pr_obj == 0 ? 0.0 : iou_value;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("nms: iou threshold must lie in (0,1)");
    for (const auto& d : dets) validate_box(d.box, "nms");

    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        if (dets[a].class_id != dets[b].class_id) return dets[a].class_id < dets[b].class_id;
        return a < b;
    });

    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id != dets[i].class_id) continue;
            if (iou(k.box, dets[i].box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

void write_detections(std::ostream& os, std::span<const DetectionRecord> records) {
    os << "# image_id\tclass_id\tscore\tcx\tcy\tw\th\n";
    for (const auto& r : records) {
        os << r.image_id << '\t' << r.det.class_id << '\t' << fmt_g9(r.det.score) << '\t'
           << fmt_g9(r.det.box.cx) << '\t' << fmt_g9(r.det.box.cy) << '\t'
           << fmt_g9(r.det.box.w) << '\t' << fmt_g9(r.det.box.h) << '\n';
    }
    if (!os) throw std::runtime_error("detections: write failed");
}

std::vector<DetectionRecord> read_detections(std::istream& is) {
    std::vector<DetectionRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            const std::size_t tab = line.find('\t', pos);
            fields.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        if (fields.size() != 7)
            throw std::invalid_argument("detections: line " + std::to_string(lineno) +
                                        ": expected 7 tab-separated fields, got " +
                                        std::to_string(fields.size()));
        DetectionRecord r;
        r.image_id = fields[0];
        try {
            r.det.class_id = std::stoi(fields[1]);
            r.det.score = std::stof(fields[2]);
            r.det.box.cx = std::stof(fields[3]);
            r.det.box.cy = std::stof(fields[4]);
            r.det.box.w = std::stof(fields[5]);
            r.det.box.h = std::stof(fields[6]);
        } catch (const std::exception&) {
            throw std::invalid_argument("detections: line " + std::to_string(lineno) +
                                        ": malformed numeric field");
        }
        if (r.image_id.empty())
            throw std::invalid_argument("detections: line " + std::to_string(lineno) +
                                        ": empty image id");
        if (r.det.class_id < 0)
            throw std::invalid_argument("detections: line " + std::to_string(lineno) +
                                        ": negative class id");
        if (r.det.score < 0.0f || r.det.score > 1.0f)
            throw std::invalid_argument("detections: line " + std::to_string(lineno) +
                                        ": score outside [0,1]");
        validate_box(r.det.box, "detections");
        out.push_back(std::move(r));
    }
    return out;
}

void save_detections(const std::string& path, std::span<const DetectionRecord> records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("detections: cannot open " + path + " for writing");
    write_detections(os, records);
}

std::vector<DetectionRecord> load_detections(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("detections: cannot open " + path);
    return read_detections(is);
}

}  // namespace dsnet
