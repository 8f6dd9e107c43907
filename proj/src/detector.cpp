#include "dsnet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "dsnet/rng.hpp"

namespace dsnet {

DetectorConfig::DetectorConfig() {
    anchors = {
        {{8, 16}, {16, 8}, {12, 12}},        // stride 4
        {{12, 90}, {90, 12}, {40, 40}},      // stride 8
        {{16, 180}, {180, 16}, {80, 80}},    // stride 16
        {{60, 200}, {200, 60}, {110, 110}},  // stride 32
    };
}

void DetectorConfig::validate() const {
    if (num_classes < 1) throw std::invalid_argument("config: class count must be >= 1");
    if (anchors_per_scale < 1) throw std::invalid_argument("config: need at least one anchor per scale");
    if (input_size <= 0 || input_size % kAllStrides[3] != 0)
        throw std::invalid_argument("config: input size " + std::to_string(input_size) +
                                    " not divisible by stride " + std::to_string(kAllStrides[3]));
    if (stage_widths.size() != 4 || csp_depths.size() != 4)
        throw std::invalid_argument("config: expected four stage widths and four csp depths");
    if (anchors.size() != 4)
        throw std::invalid_argument("config: expected anchor lists for all four strides");
    for (const auto& per_scale : anchors) {
        if (static_cast<int>(per_scale.size()) != anchors_per_scale)
            throw std::invalid_argument("config: every stride needs exactly " +
                                        std::to_string(anchors_per_scale) + " anchors");
        for (const auto& a : per_scale)
            if (!(a.w > 0.0f) || !(a.h > 0.0f))
                throw std::invalid_argument("config: anchors must have positive extents");
    }
    if (dense_layers < 1 || growth < 1)
        throw std::invalid_argument("config: dense block needs layers >= 1 and growth >= 1");
    for (int wdt : stage_widths) {
        if (wdt < 2 || wdt % 2 != 0)
            throw std::invalid_argument("config: stage widths must be positive and even");
        if (wdt % cbam_reduction != 0)
            throw std::invalid_argument("config: stage width " + std::to_string(wdt) +
                                        " not divisible by attention reduction " +
                                        std::to_string(cbam_reduction));
        if (wdt % heads != 0)
            throw std::invalid_argument("config: stage width " + std::to_string(wdt) +
                                        " not divisible by head count " + std::to_string(heads));
    }
    int max_k = 0;
    for (int k : spp_kernels) max_k = std::max(max_k, k);
    if (2 * (input_size / kAllStrides[3]) < max_k)
        throw std::invalid_argument("config: input " + std::to_string(input_size) +
                                    " leaves the bottom grid too small for the " +
                                    std::to_string(max_k) + "-tap pyramid pool");
    if (window < 1 || heads < 1 || mlp_ratio < 1 || cbam_reduction < 1)
        throw std::invalid_argument("config: attention sizes must be positive");
}

int DetectorConfig::stride_of(int scale) const {
    if (scale < 0 || scale >= num_scales())
        throw std::invalid_argument("config: scale index out of range");
    return kAllStrides[scale + (small_object_head ? 0 : 1)];
}

std::span<const AnchorBox> DetectorConfig::anchors_of(int scale) const {
    if (scale < 0 || scale >= num_scales())
        throw std::invalid_argument("config: scale index out of range");
    return anchors[static_cast<std::size_t>(scale + (small_object_head ? 0 : 1))];
}

// ---- anchors ---------------------------------------------------------------

namespace {

double shape_iou(const AnchorBox& a, const AnchorBox& b) {
    const double inter = std::min<double>(a.w, b.w) * std::min<double>(a.h, b.h);
    const double uni = static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter;
    return inter / uni;
}

}  // namespace

std::vector<AnchorBox> kmeans_anchors(std::span<const AnchorBox> shapes, int k,
                                      std::uint64_t seed, int iterations) {
    if (k < 1) throw std::invalid_argument("kmeans_anchors: k must be >= 1");
    if (static_cast<int>(shapes.size()) < k)
        throw std::invalid_argument("kmeans_anchors: fewer shapes than clusters");
    for (const auto& s : shapes)
        if (!(s.w > 0.0f) || !(s.h > 0.0f))
            throw std::invalid_argument("kmeans_anchors: shapes must have positive extents");

    std::mt19937_64 rng(seed);
    std::vector<AnchorBox> centers;
    centers.push_back(shapes[uniform_index(rng, shapes.size())]);
    while (static_cast<int>(centers.size()) < k) {
        // ++-style seeding: draw proportional to squared distance to the
        // nearest chosen center
        std::vector<double> d2(shapes.size());
        double total = 0.0;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            double best = 1.0;
            for (const auto& c : centers) best = std::min(best, 1.0 - shape_iou(shapes[i], c));
            d2[i] = best * best;
            total += d2[i];
        }
        if (total <= 0.0) {
            centers.push_back(shapes[uniform_index(rng, shapes.size())]);
            continue;
        }
        double r = uniform01(rng) * total;
        std::size_t pick = shapes.size() - 1;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            r -= d2[i];
            if (r <= 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(shapes[pick]);
    }

    std::vector<int> owner(shapes.size(), 0);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            double best = 2.0;
            for (int c = 0; c < k; ++c) {
                const double d = 1.0 - shape_iou(shapes[i], centers[static_cast<std::size_t>(c)]);
                if (d < best) {
                    best = d;
                    owner[i] = c;
                }
            }
        }
        for (int c = 0; c < k; ++c) {
            double sw = 0.0, sh = 0.0;
            int count = 0;
            for (std::size_t i = 0; i < shapes.size(); ++i) {
                if (owner[i] != c) continue;
                sw += shapes[i].w;
                sh += shapes[i].h;
                ++count;
            }
            if (count > 0) {
                centers[static_cast<std::size_t>(c)] = {static_cast<float>(sw / count),
                                                        static_cast<float>(sh / count)};
            } else {
                // reseed an empty cluster with the worst-covered shape
                double worst = -1.0;
                std::size_t pick = 0;
                for (std::size_t i = 0; i < shapes.size(); ++i) {
                    const double d =
                        1.0 - shape_iou(shapes[i], centers[static_cast<std::size_t>(owner[i])]);
                    if (d > worst) {
                        worst = d;
                        pick = i;
                    }
                }
                centers[static_cast<std::size_t>(c)] = shapes[pick];
            }
        }
    }
    std::sort(centers.begin(), centers.end(), [](const AnchorBox& a, const AnchorBox& b) {
        const double aa = static_cast<double>(a.w) * a.h, ab = static_cast<double>(b.w) * b.h;
        if (aa != ab) return aa < ab;
        return a.w < b.w;
    });
    return centers;
}

// ---- target assignment --------------------------------------------------------

std::vector<Assignment> assign_targets(std::span<const GroundTruth> gts,
                                       const DetectorConfig& cfg) {
    cfg.validate();
    std::vector<Assignment> out;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const Box& b = gts[i].box;
        if (!(b.w > 1.0f) || !(b.h > 1.0f))
            throw std::invalid_argument("assign_targets: ground truth #" + std::to_string(i) +
                                        " is degenerate (extent <= 1 pixel)");
        const float limit = static_cast<float>(cfg.input_size);
        if (b.x1() < 0.0f || b.y1() < 0.0f || b.x2() > limit || b.y2() > limit)
            throw std::invalid_argument("assign_targets: ground truth #" + std::to_string(i) +
                                        " lies outside the image bounds");
        if (gts[i].class_id < 0 || gts[i].class_id >= cfg.num_classes)
            throw std::invalid_argument("assign_targets: ground truth #" + std::to_string(i) +
                                        " has class id out of range");

        Assignment a;
        a.class_id = gts[i].class_id;
        a.gt = b;
        double best = -1.0;
        for (int s = 0; s < cfg.num_scales(); ++s) {
            const auto anchors = cfg.anchors_of(s);
            for (int ai = 0; ai < static_cast<int>(anchors.size()); ++ai) {
                const Box shape{b.cx, b.cy, anchors[static_cast<std::size_t>(ai)].w,
                                anchors[static_cast<std::size_t>(ai)].h};
                const double v = iou(shape, b);
                if (v > best) {  // strict: ties keep the smaller scale, then anchor
                    best = v;
                    a.scale = s;
                    a.anchor = ai;
                }
            }
        }
        const int stride = cfg.stride_of(a.scale);
        const int grid = cfg.grid_of(a.scale);
        a.gx = std::min(static_cast<int>(static_cast<double>(b.cx) / stride), grid - 1);
        a.gy = std::min(static_cast<int>(static_cast<double>(b.cy) / stride), grid - 1);
        out.push_back(a);
    }
    return out;
}

EncodedBox encode_box(const Box& b, int stride, const AnchorBox& anchor, int grid) {
    validate_box(b, "encode_box");
    if (stride <= 0 || grid <= 0) throw std::invalid_argument("encode_box: bad stride or grid");
    const double cxs = static_cast<double>(b.cx) / stride;
    const double cys = static_cast<double>(b.cy) / stride;
    EncodedBox e;
    e.gx = std::min(static_cast<int>(cxs), grid - 1);
    e.gy = std::min(static_cast<int>(cys), grid - 1);
    const double fx = cxs - e.gx, fy = cys - e.gy;
    if (e.gx < 0 || e.gy < 0 || cxs >= static_cast<double>(grid) || cys >= static_cast<double>(grid))
        throw std::invalid_argument("encode_box: center outside the grid");
    if (fx <= 0.0 || fx >= 1.0 || fy <= 0.0 || fy >= 1.0)
        throw std::invalid_argument("encode_box: center sits on a grid line");
    e.tx = std::log(fx / (1.0 - fx));
    e.ty = std::log(fy / (1.0 - fy));
    e.tw = std::log(static_cast<double>(b.w) / anchor.w);
    e.th = std::log(static_cast<double>(b.h) / anchor.h);
    return e;
}

// ---- loss ----------------------------------------------------------------------

namespace {

// sigmoid cross-entropy from the raw logit, stable for large |t|
double bce_logit(double t, double y) {
    return std::max(t, 0.0) - t * y + std::log1p(std::exp(-std::abs(t)));
}

constexpr double kTwClamp = 4.0;

Box decode_cell(const Tensor& out, int fields, int a, int gy, int gx, int stride,
                const AnchorBox& anchor) {
    const int base = a * fields;
    const double tx = out.at(base + 0, gy, gx);
    const double ty = out.at(base + 1, gy, gx);
    const double tw = std::clamp(static_cast<double>(out.at(base + 2, gy, gx)), -kTwClamp, kTwClamp);
    const double th = std::clamp(static_cast<double>(out.at(base + 3, gy, gx)), -kTwClamp, kTwClamp);
    Box b;
    b.cx = static_cast<float>((gx + activate(Act::Sigmoid, tx)) * stride);
    b.cy = static_cast<float>((gy + activate(Act::Sigmoid, ty)) * stride);
    b.w = static_cast<float>(anchor.w * std::exp(tw));
    b.h = static_cast<float>(anchor.h * std::exp(th));
    return b;
}

void check_outputs(std::span<const Tensor> outputs, const DetectorConfig& cfg) {
    if (static_cast<int>(outputs.size()) != cfg.num_scales())
        throw std::invalid_argument("loss: expected " + std::to_string(cfg.num_scales()) +
                                    " head outputs, got " + std::to_string(outputs.size()));
    for (int s = 0; s < cfg.num_scales(); ++s) {
        const Tensor& o = outputs[static_cast<std::size_t>(s)];
        const int grid = cfg.grid_of(s);
        if (o.rank() != 3 || o.dim(0) != cfg.head_channels() || o.dim(1) != grid ||
            o.dim(2) != grid)
            throw std::invalid_argument("loss: head " + std::to_string(s) + " has shape " +
                                        o.shape_str() + ", expected " +
                                        std::to_string(cfg.head_channels()) + "x" +
                                        std::to_string(grid) + "x" + std::to_string(grid));
    }
}

}  // namespace

LossBreakdown total_loss(std::span<const Tensor> outputs, std::span<const Assignment> assigns,
                         const DetectorConfig& cfg) {
    check_outputs(outputs, cfg);
    const int fields = 5 + cfg.num_classes;

    // objectness targets per (scale, anchor, cell)
    std::vector<std::vector<char>> obj_target(outputs.size());
    for (std::size_t s = 0; s < outputs.size(); ++s)
        obj_target[s].assign(static_cast<std::size_t>(cfg.anchors_per_scale) *
                                 cfg.grid_of(static_cast<int>(s)) *
                                 cfg.grid_of(static_cast<int>(s)),
                             0);
    for (const Assignment& a : assigns) {
        const int grid = cfg.grid_of(a.scale);
        obj_target[static_cast<std::size_t>(a.scale)]
                  [(static_cast<std::size_t>(a.anchor) * grid + a.gy) * grid + a.gx] = 1;
    }

    LossBreakdown l;
    double coord_sum = 0.0, cls_sum = 0.0;
    for (const Assignment& a : assigns) {
        const Tensor& o = outputs[static_cast<std::size_t>(a.scale)];
        const Box pred = decode_cell(o, fields, a.anchor, a.gy, a.gx, cfg.stride_of(a.scale),
                                     cfg.anchors_of(a.scale)[static_cast<std::size_t>(a.anchor)]);
        coord_sum += ciou_loss(pred, a.gt);
        const int base = a.anchor * fields;
        for (int k = 0; k < cfg.num_classes; ++k)
            cls_sum += bce_logit(o.at(base + 5 + k, a.gy, a.gx), k == a.class_id ? 1.0 : 0.0);
    }
    if (!assigns.empty()) {
        l.coord = coord_sum / static_cast<double>(assigns.size());
        l.cls = cls_sum / static_cast<double>(assigns.size());
    }

    double obj_sum = 0.0;
    std::size_t cells = 0;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
        const Tensor& o = outputs[s];
        const int grid = cfg.grid_of(static_cast<int>(s));
        for (int a = 0; a < cfg.anchors_per_scale; ++a)
            for (int gy = 0; gy < grid; ++gy)
                for (int gx = 0; gx < grid; ++gx) {
                    const char tgt =
                        obj_target[s][(static_cast<std::size_t>(a) * grid + gy) * grid + gx];
                    obj_sum += bce_logit(o.at(a * fields + 4, gy, gx), tgt ? 1.0 : 0.0);
                    ++cells;
                }
    }
    l.obj = obj_sum / static_cast<double>(cells);
    l.total = l.coord + l.cls + l.obj;
    return l;
}

std::vector<Tensor> total_loss_grad(std::span<const Tensor> outputs,
                                    std::span<const Assignment> assigns,
                                    const DetectorConfig& cfg) {
    check_outputs(outputs, cfg);
    const int fields = 5 + cfg.num_classes;

    std::vector<Tensor> grads;
    grads.reserve(outputs.size());
    for (const Tensor& o : outputs) grads.emplace_back(o.shape());

    std::vector<std::vector<char>> obj_target(outputs.size());
    for (std::size_t s = 0; s < outputs.size(); ++s)
        obj_target[s].assign(static_cast<std::size_t>(cfg.anchors_per_scale) *
                                 cfg.grid_of(static_cast<int>(s)) *
                                 cfg.grid_of(static_cast<int>(s)),
                             0);
    for (const Assignment& a : assigns) {
        const int grid = cfg.grid_of(a.scale);
        obj_target[static_cast<std::size_t>(a.scale)]
                  [(static_cast<std::size_t>(a.anchor) * grid + a.gy) * grid + a.gx] = 1;
    }

    std::size_t cells = 0;
    for (std::size_t s = 0; s < outputs.size(); ++s)
        cells += static_cast<std::size_t>(cfg.anchors_per_scale) *
                 cfg.grid_of(static_cast<int>(s)) * cfg.grid_of(static_cast<int>(s));

    // objectness: d bce / d t = sigmoid(t) - target, averaged over every cell
    for (std::size_t s = 0; s < outputs.size(); ++s) {
        const Tensor& o = outputs[s];
        Tensor& g = grads[s];
        const int grid = cfg.grid_of(static_cast<int>(s));
        for (int a = 0; a < cfg.anchors_per_scale; ++a)
            for (int gy = 0; gy < grid; ++gy)
                for (int gx = 0; gx < grid; ++gx) {
                    const char tgt =
                        obj_target[s][(static_cast<std::size_t>(a) * grid + gy) * grid + gx];
                    const double t = o.at(a * fields + 4, gy, gx);
                    g.at(a * fields + 4, gy, gx) = static_cast<float>(
                        (activate(Act::Sigmoid, t) - (tgt ? 1.0 : 0.0)) /
                        static_cast<double>(cells));
                }
    }

    if (assigns.empty()) return grads;
    const double inv_n = 1.0 / static_cast<double>(assigns.size());

    for (const Assignment& a : assigns) {
        const Tensor& o = outputs[static_cast<std::size_t>(a.scale)];
        Tensor& g = grads[static_cast<std::size_t>(a.scale)];
        const int base = a.anchor * fields;
        const int stride = cfg.stride_of(a.scale);
        const AnchorBox anchor = cfg.anchors_of(a.scale)[static_cast<std::size_t>(a.anchor)];

        // class term
        for (int k = 0; k < cfg.num_classes; ++k) {
            const double t = o.at(base + 5 + k, a.gy, a.gx);
            const double y = k == a.class_id ? 1.0 : 0.0;
            g.at(base + 5 + k, a.gy, a.gx) = static_cast<float>(
                static_cast<double>(g.at(base + 5 + k, a.gy, a.gx)) +
                (activate(Act::Sigmoid, t) - y) * inv_n);
        }

        // coordinate term through the decode transform
        const Box pred = decode_cell(o, fields, a.anchor, a.gy, a.gx, stride, anchor);
        const std::array<double, 4> db = ciou_gradient(pred, a.gt);
        const double tx = o.at(base + 0, a.gy, a.gx);
        const double ty = o.at(base + 1, a.gy, a.gx);
        const double tw = o.at(base + 2, a.gy, a.gx);
        const double th = o.at(base + 3, a.gy, a.gx);
        const double sx = activate(Act::Sigmoid, tx), sy = activate(Act::Sigmoid, ty);
        const double d_tx = db[0] * sx * (1.0 - sx) * stride;
        const double d_ty = db[1] * sy * (1.0 - sy) * stride;
        // w = anchor_w * exp(tw) => dw/dtw = w; the clamp zeroes the slope outside
        const double d_tw = std::abs(tw) < kTwClamp ? db[2] * pred.w : 0.0;
        const double d_th = std::abs(th) < kTwClamp ? db[3] * pred.h : 0.0;
        const double adds[4] = {d_tx, d_ty, d_tw, d_th};
        for (int f = 0; f < 4; ++f)
            g.at(base + f, a.gy, a.gx) = static_cast<float>(
                static_cast<double>(g.at(base + f, a.gy, a.gx)) + adds[f] * inv_n);
    }
    return grads;
}

// ---- detector graph ----------------------------------------------------------

Detector::Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& w = cfg_.stage_widths;
    const Act act = cfg_.act;

    stem0_ = ConvBnAct::make(3, w[0], 3, 2, act);
    stem1_ = ConvBnAct::make(w[0], w[0], 3, 2, act);
    for (int i = 0; i < 4; ++i) {
        Stage st;
        st.dense = DenseBlock::make(w[static_cast<std::size_t>(i)], cfg_.dense_layers, cfg_.growth, act);
        st.transition = ConvBnAct::make(st.dense.out_channels(), w[static_cast<std::size_t>(i)], 1, 1, act);
        st.csp = CspBlock::make(w[static_cast<std::size_t>(i)], w[static_cast<std::size_t>(i)],
                                cfg_.csp_depths[static_cast<std::size_t>(i)], act);
        stages_.push_back(std::move(st));
        if (i < 3)
            downs_.push_back(ConvBnAct::make(w[static_cast<std::size_t>(i)],
                                             w[static_cast<std::size_t>(i + 1)], 3, 2, act));
    }
    spp_ = SppBlock::make(w[3], cfg_.spp_kernels, act);

    const int lowest = cfg_.small_object_head ? 0 : 1;
    for (int level = 2; level >= lowest; --level) {
        laterals_.push_back(ConvBnAct::make(w[static_cast<std::size_t>(level + 1)],
                                            w[static_cast<std::size_t>(level)], 1, 1, act));
        Fusion f;
        f.reduce = ConvBnAct::make(2 * w[static_cast<std::size_t>(level)],
                                   w[static_cast<std::size_t>(level)], 1, 1, act);
        f.conv = ConvBnAct::make(w[static_cast<std::size_t>(level)],
                                 w[static_cast<std::size_t>(level)], 3, 1, act);
        f.attn = CbamWeights::make(w[static_cast<std::size_t>(level)], cfg_.cbam_reduction);
        td_fusions_.push_back(std::move(f));
    }
    for (int level = lowest + 1; level <= 3; ++level) {
        bu_downs_.push_back(ConvBnAct::make(w[static_cast<std::size_t>(level - 1)],
                                            w[static_cast<std::size_t>(level)], 3, 2, act));
        Fusion f;
        f.reduce = ConvBnAct::make(2 * w[static_cast<std::size_t>(level)],
                                   w[static_cast<std::size_t>(level)], 1, 1, act);
        f.conv = ConvBnAct::make(w[static_cast<std::size_t>(level)],
                                 w[static_cast<std::size_t>(level)], 3, 1, act);
        f.attn = CbamWeights::make(w[static_cast<std::size_t>(level)], cfg_.cbam_reduction);
        bu_fusions_.push_back(std::move(f));
    }
    for (int level = lowest; level <= 3; ++level) {
        Head h;
        h.attn = StrBlockWeights::make(w[static_cast<std::size_t>(level)], cfg_.window, cfg_.heads,
                                       cfg_.mlp_ratio);
        h.out_w = Tensor({cfg_.head_channels(), w[static_cast<std::size_t>(level)], 1, 1});
        h.out_b = Tensor({cfg_.head_channels()});
        heads_.push_back(std::move(h));
    }
}

namespace {

Tensor apply_fusion_convs(const Tensor& cat, const ConvBnAct& reduce, const ConvBnAct& conv,
                          const CbamWeights& attn) {
    Tensor y = conv_bn_act(cat, reduce);
    y = conv_bn_act(y, conv);
    return cbam(y, attn);
}

}  // namespace

std::vector<Tensor> Detector::forward(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.input_size ||
        image.dim(2) != cfg_.input_size)
        throw std::invalid_argument("forward: expected a 3x" + std::to_string(cfg_.input_size) +
                                    "x" + std::to_string(cfg_.input_size) + " image, got " +
                                    image.shape_str());

    Tensor x = conv_bn_act(image, stem0_);
    x = conv_bn_act(x, stem1_);
    std::vector<Tensor> c;
    for (int i = 0; i < 4; ++i) {
        if (i > 0) x = conv_bn_act(x, downs_[static_cast<std::size_t>(i - 1)]);
        x = dense_block(x, stages_[static_cast<std::size_t>(i)].dense);
        x = conv_bn_act(x, stages_[static_cast<std::size_t>(i)].transition);
        x = csp_block(x, stages_[static_cast<std::size_t>(i)].csp);
        if (i == 3) x = spp_block(x, spp_);
        c.push_back(x);
    }

    const int lowest = cfg_.small_object_head ? 0 : 1;
    std::vector<Tensor> t(4);
    t[3] = c[3];
    for (int level = 2, j = 0; level >= lowest; --level, ++j) {
        const Tensor up = upsample_nearest2x(
            conv_bn_act(t[static_cast<std::size_t>(level + 1)], laterals_[static_cast<std::size_t>(j)]));
        const Fusion& f = td_fusions_[static_cast<std::size_t>(j)];
        t[static_cast<std::size_t>(level)] = apply_fusion_convs(
            concat(c[static_cast<std::size_t>(level)], up, 0), f.reduce, f.conv, f.attn);
    }

    std::vector<Tensor> n(4);
    n[static_cast<std::size_t>(lowest)] = t[static_cast<std::size_t>(lowest)];
    for (int level = lowest + 1, j = 0; level <= 3; ++level, ++j) {
        const Tensor d =
            conv_bn_act(n[static_cast<std::size_t>(level - 1)], bu_downs_[static_cast<std::size_t>(j)]);
        const Fusion& f = bu_fusions_[static_cast<std::size_t>(j)];
        n[static_cast<std::size_t>(level)] = apply_fusion_convs(
            concat(d, t[static_cast<std::size_t>(level)], 0), f.reduce, f.conv, f.attn);
    }

    std::vector<Tensor> outs;
    const int to_hwc[3] = {1, 2, 0};
    const int to_chw[3] = {2, 0, 1};
    for (int level = lowest, hi = 0; level <= 3; ++level, ++hi) {
        const Head& head = heads_[static_cast<std::size_t>(hi)];
        Tensor hwc = transpose(n[static_cast<std::size_t>(level)], to_hwc);
        hwc = str_block_pair(hwc, head.attn, cfg_.scale_qk);
        const Tensor chw = transpose(hwc, to_chw);
        outs.push_back(conv2d(chw, head.out_w, &head.out_b, 1, 0));
    }
    return outs;
}

std::vector<Detection> Detector::decode(std::span<const Tensor> outputs,
                                        double score_threshold) const {
    check_outputs(outputs, cfg_);
    if (score_threshold < 0.0 || score_threshold > 1.0)
        throw std::invalid_argument("decode: score threshold must lie in [0,1]");
    const int fields = 5 + cfg_.num_classes;
    std::vector<Detection> dets;
    for (int s = 0; s < cfg_.num_scales(); ++s) {
        const Tensor& o = outputs[static_cast<std::size_t>(s)];
        const int grid = cfg_.grid_of(s);
        const int stride = cfg_.stride_of(s);
        const auto anchors = cfg_.anchors_of(s);
        for (int a = 0; a < cfg_.anchors_per_scale; ++a) {
            const int base = a * fields;
            for (int gy = 0; gy < grid; ++gy) {
                for (int gx = 0; gx < grid; ++gx) {
                    const double obj = activate(Act::Sigmoid, o.at(base + 4, gy, gx));
                    int cls = 0;
                    double best = -1.0;
                    for (int k = 0; k < cfg_.num_classes; ++k) {
                        const double p = activate(Act::Sigmoid, o.at(base + 5 + k, gy, gx));
                        if (p > best) {  // strict: argmax ties keep the lower class id
                            best = p;
                            cls = k;
                        }
                    }
                    const double score = obj * best;
                    if (score < score_threshold) continue;
                    Detection d;
                    d.box = decode_cell(o, fields, a, gy, gx, stride,
                                        anchors[static_cast<std::size_t>(a)]);
                    d.class_id = cls;
                    d.score = static_cast<float>(score);
                    dets.push_back(d);
                }
            }
        }
    }
    return dets;
}

// ---- weight registry -----------------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> Detector::registry() {
    std::vector<std::pair<std::string, Tensor*>> r;
    auto conv = [&r](const std::string& p, ConvBnAct& c) {
        r.emplace_back(p + ".conv.w", &c.w);
        r.emplace_back(p + ".bn.mean", &c.bn_mean);
        r.emplace_back(p + ".bn.var", &c.bn_var);
        r.emplace_back(p + ".bn.gamma", &c.bn_gamma);
        r.emplace_back(p + ".bn.beta", &c.bn_beta);
    };
    auto cbam_w = [&r](const std::string& p, CbamWeights& w) {
        r.emplace_back(p + ".w0", &w.w0);
        r.emplace_back(p + ".w1", &w.w1);
        r.emplace_back(p + ".conv7", &w.conv7);
    };
    auto msa = [&r](const std::string& p, MsaWeights& w) {
        r.emplace_back(p + ".wq", &w.wq);
        r.emplace_back(p + ".bq", &w.bq);
        r.emplace_back(p + ".wk", &w.wk);
        r.emplace_back(p + ".bk", &w.bk);
        r.emplace_back(p + ".wv", &w.wv);
        r.emplace_back(p + ".bv", &w.bv);
        r.emplace_back(p + ".wo", &w.wo);
        r.emplace_back(p + ".bo", &w.bo);
    };
    auto mlp = [&r](const std::string& p, MlpWeights& w) {
        r.emplace_back(p + ".fc1", &w.fc1);
        r.emplace_back(p + ".b1", &w.b1);
        r.emplace_back(p + ".fc2", &w.fc2);
        r.emplace_back(p + ".b2", &w.b2);
    };
    auto str = [&](const std::string& p, StrBlockWeights& w) {
        r.emplace_back(p + ".ln1.g", &w.ln1_g);
        r.emplace_back(p + ".ln1.b", &w.ln1_b);
        msa(p + ".msa1", w.msa1);
        r.emplace_back(p + ".ln2.g", &w.ln2_g);
        r.emplace_back(p + ".ln2.b", &w.ln2_b);
        mlp(p + ".mlp1", w.mlp1);
        r.emplace_back(p + ".ln3.g", &w.ln3_g);
        r.emplace_back(p + ".ln3.b", &w.ln3_b);
        msa(p + ".msa2", w.msa2);
        r.emplace_back(p + ".ln4.g", &w.ln4_g);
        r.emplace_back(p + ".ln4.b", &w.ln4_b);
        mlp(p + ".mlp2", w.mlp2);
    };

    conv("backbone.stem0", stem0_);
    conv("backbone.stem1", stem1_);
    for (int i = 0; i < 4; ++i) {
        const std::string sp = "backbone.stage" + std::to_string(i);
        Stage& st = stages_[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < st.dense.layers.size(); ++j)
            conv(sp + ".dense.layer" + std::to_string(j), st.dense.layers[j]);
        conv(sp + ".transition", st.transition);
        for (std::size_t j = 0; j < st.csp.units.size(); ++j) {
            conv(sp + ".csp.unit" + std::to_string(j) + ".reduce", st.csp.units[j].reduce);
            conv(sp + ".csp.unit" + std::to_string(j) + ".expand", st.csp.units[j].expand);
        }
        conv(sp + ".csp.fuse", st.csp.fuse);
        if (i < 3) conv("backbone.down" + std::to_string(i), downs_[static_cast<std::size_t>(i)]);
    }
    conv("backbone.spp.fuse", spp_.fuse);

    const int lowest = cfg_.small_object_head ? 0 : 1;
    for (int level = 2, j = 0; level >= lowest; --level, ++j) {
        const std::string p = "neck.td.s" + std::to_string(kAllStrides[level]);
        conv(p + ".lateral", laterals_[static_cast<std::size_t>(j)]);
        conv(p + ".reduce", td_fusions_[static_cast<std::size_t>(j)].reduce);
        conv(p + ".conv", td_fusions_[static_cast<std::size_t>(j)].conv);
        cbam_w(p + ".cbam", td_fusions_[static_cast<std::size_t>(j)].attn);
    }
    for (int level = lowest + 1, j = 0; level <= 3; ++level, ++j) {
        const std::string p = "neck.bu.s" + std::to_string(kAllStrides[level]);
        conv(p + ".down", bu_downs_[static_cast<std::size_t>(j)]);
        conv(p + ".reduce", bu_fusions_[static_cast<std::size_t>(j)].reduce);
        conv(p + ".conv", bu_fusions_[static_cast<std::size_t>(j)].conv);
        cbam_w(p + ".cbam", bu_fusions_[static_cast<std::size_t>(j)].attn);
    }
    for (int level = lowest, hi = 0; level <= 3; ++level, ++hi) {
        const std::string p = "head.s" + std::to_string(kAllStrides[level]);
        str(p + ".attn", heads_[static_cast<std::size_t>(hi)].attn);
        r.emplace_back(p + ".out.w", &heads_[static_cast<std::size_t>(hi)].out_w);
        r.emplace_back(p + ".out.b", &heads_[static_cast<std::size_t>(hi)].out_b);
    }
    return r;
}

std::vector<std::pair<std::string, const Tensor*>> Detector::named_parameters() const {
    auto mut = const_cast<Detector*>(this)->registry();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(std::move(name), t);
    return out;
}

void Detector::random_init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::string var_suffix = ".bn.var";
    for (auto& [name, t] : registry()) {
        const bool is_var = name.size() >= var_suffix.size() &&
                            name.compare(name.size() - var_suffix.size(), var_suffix.size(),
                                         var_suffix) == 0;
        for (std::size_t i = 0; i < t->numel(); ++i)
            (*t)[i] = static_cast<float>(is_var ? uniform(rng, 0.9, 1.1) : uniform(rng, -0.1, 0.1));
    }
}

long Detector::parameter_count() const {
    long n = 0;
    for (const auto& [name, t] : named_parameters()) n += static_cast<long>(t->numel());
    return n;
}

void Detector::save_weights(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("weights: cannot open " + path + " for writing");
    const auto params = named_parameters();
    os.write("DW1\n", 4);
    const std::uint32_t count = static_cast<std::uint32_t>(params.size());
    unsigned char cb[4] = {static_cast<unsigned char>(count & 0xff),
                           static_cast<unsigned char>((count >> 8) & 0xff),
                           static_cast<unsigned char>((count >> 16) & 0xff),
                           static_cast<unsigned char>((count >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(cb), 4);
    for (const auto& [name, t] : params) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                               static_cast<unsigned char>((len >> 8) & 0xff),
                               static_cast<unsigned char>((len >> 16) & 0xff),
                               static_cast<unsigned char>((len >> 24) & 0xff)};
        os.write(reinterpret_cast<const char*>(lb), 4);
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_dt1(os, *t);
    }
    if (!os) throw std::runtime_error("weights: write failed for " + path);
}

void Detector::load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("weights: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "DW1\n", 4) != 0)
        throw std::invalid_argument("weights: bad magic in " + path);
    unsigned char cb[4];
    if (!is.read(reinterpret_cast<char*>(cb), 4))
        throw std::invalid_argument("weights: truncated section count");
    const std::uint32_t count = static_cast<std::uint32_t>(cb[0]) |
                                (static_cast<std::uint32_t>(cb[1]) << 8) |
                                (static_cast<std::uint32_t>(cb[2]) << 16) |
                                (static_cast<std::uint32_t>(cb[3]) << 24);

    std::map<std::string, Tensor> sections;
    std::vector<std::string> order;
    for (std::uint32_t i = 0; i < count; ++i) {
        unsigned char lb[4];
        if (!is.read(reinterpret_cast<char*>(lb), 4))
            throw std::invalid_argument("weights: truncated section header");
        const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                                  (static_cast<std::uint32_t>(lb[1]) << 8) |
                                  (static_cast<std::uint32_t>(lb[2]) << 16) |
                                  (static_cast<std::uint32_t>(lb[3]) << 24);
        if (len == 0 || len > 4096) throw std::invalid_argument("weights: unreasonable name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw std::invalid_argument("weights: truncated name");
        Tensor t = read_dt1(is);
        if (sections.count(name))
            throw std::invalid_argument("weights: duplicate section '" + name + "'");
        sections.emplace(name, std::move(t));
        order.push_back(std::move(name));
    }

    auto params = registry();
    for (auto& [name, dst] : params) {
        auto it = sections.find(name);
        if (it == sections.end())
            throw std::invalid_argument("weights: missing section '" + name + "'");
        if (it->second.shape() != dst->shape())
            throw std::invalid_argument("weights: section '" + name + "' has shape " +
                                        it->second.shape_str() + ", model expects " +
                                        dst->shape_str());
    }
    if (sections.size() != params.size()) {
        std::map<std::string, bool> known;
        for (const auto& [name, dst] : params) known[name] = true;
        for (const auto& name : order)
            if (!known.count(name))
                throw std::invalid_argument("weights: unknown section '" + name + "'");
    }
    for (auto& [name, dst] : params) *dst = std::move(sections.at(name));
}

// ---- profile table -------------------------------------------------------------

namespace {

std::string shape3(int c, int s) {
    return std::to_string(c) + "x" + std::to_string(s) + "x" + std::to_string(s);
}

long long conv_macs(int out_c, int in_c, int k, int out_s) {
    return static_cast<long long>(out_c) * in_c * k * k * out_s * out_s;
}

}  // namespace

std::vector<LayerRow> Detector::layer_table() const {
    std::vector<LayerRow> rows;
    const auto& w = cfg_.stage_widths;
    const int in = cfg_.input_size;

    auto add = [&rows](std::string name, std::string shape, long params, long long macs) {
        rows.push_back({std::move(name), std::move(shape), params, macs, 0, 0});
    };

    add("backbone.stem0", shape3(w[0], in / 2), stem0_.parameter_count(),
        conv_macs(w[0], 3, 3, in / 2));
    add("backbone.stem1", shape3(w[0], in / 4), stem1_.parameter_count(),
        conv_macs(w[0], w[0], 3, in / 4));
    for (int i = 0; i < 4; ++i) {
        const int s = in / kAllStrides[i];
        const Stage& st = stages_[static_cast<std::size_t>(i)];
        long long dm = 0;
        for (std::size_t j = 0; j < st.dense.layers.size(); ++j)
            dm += conv_macs(cfg_.growth, st.dense.layers[j].in_channels(), 3, s);
        const std::string sp = "backbone.stage" + std::to_string(i);
        add(sp + ".dense", shape3(st.dense.out_channels(), s), st.dense.parameter_count(), dm);
        add(sp + ".transition", shape3(w[static_cast<std::size_t>(i)], s),
            st.transition.parameter_count(),
            conv_macs(w[static_cast<std::size_t>(i)], st.dense.out_channels(), 1, s));
        long long cm = 0;
        const int half = w[static_cast<std::size_t>(i)] / 2;
        for (std::size_t j = 0; j < st.csp.units.size(); ++j)
            cm += conv_macs(half / 2, half, 1, s) + conv_macs(half, half / 2, 3, s);
        cm += conv_macs(w[static_cast<std::size_t>(i)], w[static_cast<std::size_t>(i)], 1, s);
        add(sp + ".csp", shape3(w[static_cast<std::size_t>(i)], s), st.csp.parameter_count(), cm);
        if (i < 3)
            add("backbone.down" + std::to_string(i), shape3(w[static_cast<std::size_t>(i + 1)],
                                                            in / kAllStrides[i + 1]),
                downs_[static_cast<std::size_t>(i)].parameter_count(),
                conv_macs(w[static_cast<std::size_t>(i + 1)], w[static_cast<std::size_t>(i)], 3,
                          in / kAllStrides[i + 1]));
    }
    {
        const int s = in / kAllStrides[3];
        add("backbone.spp", shape3(w[3], s), spp_.parameter_count(),
            conv_macs(w[3], 4 * w[3], 1, s));
    }

    auto fusion_rows = [&](const std::string& p, int level, const Fusion& f, long lat_params,
                           long long lat_macs) {
        const int s = in / kAllStrides[level];
        const int c = w[static_cast<std::size_t>(level)];
        const long long fm = lat_macs + conv_macs(c, 2 * c, 1, s) + conv_macs(c, c, 3, s) +
                             // cbam: two mlp passes + spatial conv + both gatings
                             2LL * (c * (c / cfg_.cbam_reduction) * 2) +
                             static_cast<long long>(s) * s * 2 * 49 +
                             2LL * c * s * s;
        add(p, shape3(c, s),
            lat_params + f.reduce.parameter_count() + f.conv.parameter_count() +
                f.attn.parameter_count(),
            fm);
    };

    const int lowest = cfg_.small_object_head ? 0 : 1;
    for (int level = 2, j = 0; level >= lowest; --level, ++j) {
        const int s = in / kAllStrides[level];
        fusion_rows("neck.td.s" + std::to_string(kAllStrides[level]), level,
                    td_fusions_[static_cast<std::size_t>(j)],
                    laterals_[static_cast<std::size_t>(j)].parameter_count(),
                    conv_macs(w[static_cast<std::size_t>(level)],
                              w[static_cast<std::size_t>(level + 1)], 1, s / 2));
    }
    for (int level = lowest + 1, j = 0; level <= 3; ++level, ++j) {
        const int s = in / kAllStrides[level];
        fusion_rows("neck.bu.s" + std::to_string(kAllStrides[level]), level,
                    bu_fusions_[static_cast<std::size_t>(j)],
                    bu_downs_[static_cast<std::size_t>(j)].parameter_count(),
                    conv_macs(w[static_cast<std::size_t>(level)],
                              w[static_cast<std::size_t>(level - 1)], 3, s));
    }

    for (int level = lowest, hi = 0; level <= 3; ++level, ++hi) {
        const int s = in / kAllStrides[level];
        const int c = w[static_cast<std::size_t>(level)];
        const Head& h = heads_[static_cast<std::size_t>(hi)];
        const ComplexityCount cc = complexity(s, s, c, cfg_.window);
        LayerRow row;
        row.name = "head.s" + std::to_string(kAllStrides[level]) + ".attn";
        row.out_shape = shape3(c, s);
        row.params = h.attn.parameter_count();
        // two encoder blocks: attention cost plus the two mlps
        row.macs = 2LL * static_cast<long long>(cc.w_msa) +
                   2LL * 2 * cfg_.mlp_ratio * static_cast<long long>(s) * s * c * c;
        row.msa = cc.msa;
        row.wmsa = cc.w_msa;
        rows.push_back(std::move(row));
        add("head.s" + std::to_string(kAllStrides[level]) + ".out",
            shape3(cfg_.head_channels(), s),
            static_cast<long>(h.out_w.numel() + h.out_b.numel()),
            conv_macs(cfg_.head_channels(), c, 1, s));
    }
    return rows;
}

}  // namespace dsnet
