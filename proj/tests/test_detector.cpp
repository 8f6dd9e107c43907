#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsnet/box.hpp"
#include "dsnet/detector.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/tensor.hpp"

using namespace dsnet;
namespace fs = std::filesystem;

namespace {

DetectorConfig tiny_config() {
    DetectorConfig dc;
    dc.input_size = 96;
    dc.num_classes = 3;
    dc.stage_widths = {8, 16, 32, 64};
    dc.csp_depths = {1, 1, 1, 1};
    dc.dense_layers = 2;
    dc.growth = 8;
    dc.spp_kernels = {3, 5};
    dc.cbam_reduction = 8;
    dc.window = 4;
    dc.heads = 2;
    return dc;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dsnet-testdet-" + std::to_string(static_cast<unsigned long>(::getpid())));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

std::size_t flat(const Tensor& o, int ch, int gy, int gx) {
    return (static_cast<std::size_t>(ch) * o.dim(1) + gy) * o.dim(2) + gx;
}

// the documented cell transform, reproduced so decode can be checked from the
// outside: cx = (gx + sigmoid(tx)) * stride, w = anchor_w * exp(clamp(tw, 4))
Box hand_decode(double tx, double ty, double tw, double th, int gx, int gy, int stride,
                const AnchorBox& a) {
    Box b;
    b.cx = static_cast<float>((gx + sigmoid(tx)) * stride);
    b.cy = static_cast<float>((gy + sigmoid(ty)) * stride);
    b.w = static_cast<float>(a.w * std::exp(std::clamp(tw, -4.0, 4.0)));
    b.h = static_cast<float>(a.h * std::exp(std::clamp(th, -4.0, 4.0)));
    return b;
}

}  // namespace

TEST_CASE("config accessors and validation") {
    DetectorConfig cfg;
    cfg.validate();
    CHECK(cfg.num_scales() == 4);
    CHECK(cfg.head_channels() == 3 * (5 + 8));
    CHECK(cfg.stride_of(0) == 4);
    CHECK(cfg.stride_of(3) == 32);
    CHECK(cfg.grid_of(0) == 104);
    CHECK(cfg.anchors_of(1).size() == 3);
    CHECK_THROWS_AS(cfg.stride_of(4), std::invalid_argument);

    cfg.small_object_head = false;
    CHECK(cfg.num_scales() == 3);
    CHECK(cfg.stride_of(0) == 8);  // the fine-grid path is gone
    CHECK(cfg.anchors_of(0)[0].w == 12.0f);
    CHECK_THROWS_AS(cfg.stride_of(3), std::invalid_argument);

    auto broken = [](auto&& mutate) {
        DetectorConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    };
    broken([](DetectorConfig& c) { c.num_classes = 0; });
    broken([](DetectorConfig& c) { c.anchors_per_scale = 0; });
    broken([](DetectorConfig& c) { c.input_size = 100; });  // not a stride multiple
    broken([](DetectorConfig& c) { c.stage_widths = {16, 32, 64}; });
    broken([](DetectorConfig& c) { c.anchors.pop_back(); });
    broken([](DetectorConfig& c) { c.anchors[1].pop_back(); });
    broken([](DetectorConfig& c) { c.anchors[2][0].w = 0.0f; });
    broken([](DetectorConfig& c) { c.dense_layers = 0; });
    broken([](DetectorConfig& c) { c.stage_widths[0] = 17; });       // odd
    broken([](DetectorConfig& c) { c.cbam_reduction = 24; });        // 16 % 24 != 0
    broken([](DetectorConfig& c) { c.heads = 5; });                  // 16 % 5 != 0
    broken([](DetectorConfig& c) { c.input_size = 32; });            // grid 1 vs 13-tap pool
    broken([](DetectorConfig& c) { c.window = 0; });
}

TEST_CASE("anchor clustering is deterministic and sorted by area") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<float> side(4.0f, 120.0f);
    std::vector<AnchorBox> shapes;
    for (int i = 0; i < 60; ++i) shapes.push_back({side(rng), side(rng)});

    const auto a = kmeans_anchors(shapes, 5, 99);
    const auto b = kmeans_anchors(shapes, 5, 99);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(a[i].w == b[i].w);
        CHECK(a[i].h == b[i].h);
    }
    for (std::size_t i = 1; i < 5; ++i)
        CHECK(static_cast<double>(a[i - 1].w) * a[i - 1].h <=
              static_cast<double>(a[i].w) * a[i].h);

    // k = 1 converges to the plain mean shape
    const auto one = kmeans_anchors(shapes, 1, 7);
    double mw = 0.0, mh = 0.0;
    for (const auto& s : shapes) {
        mw += s.w;
        mh += s.h;
    }
    CHECK(one[0].w == doctest::Approx(mw / 60).epsilon(1e-5));
    CHECK(one[0].h == doctest::Approx(mh / 60).epsilon(1e-5));

    // three well-separated clusters are recovered near their true means
    std::vector<AnchorBox> grouped;
    const float means[3][2] = {{10, 20}, {60, 55}, {130, 85}};
    std::uniform_real_distribution<float> jitter(-2.0f, 2.0f);
    for (int g = 0; g < 3; ++g)
        for (int i = 0; i < 30; ++i)
            grouped.push_back({means[g][0] + jitter(rng), means[g][1] + jitter(rng)});
    const auto centers = kmeans_anchors(grouped, 3, 3);
    for (int g = 0; g < 3; ++g) {
        CHECK(std::abs(centers[static_cast<std::size_t>(g)].w - means[g][0]) < 4.0f);
        CHECK(std::abs(centers[static_cast<std::size_t>(g)].h - means[g][1]) < 4.0f);
    }

    CHECK_THROWS_AS(kmeans_anchors(shapes, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(kmeans_anchors(std::vector<AnchorBox>{{4, 4}}, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(kmeans_anchors(std::vector<AnchorBox>{{4, 0}}, 1, 1), std::invalid_argument);
}

TEST_CASE("target assignment picks the best anchor over all scales") {
    const DetectorConfig cfg = tiny_config();
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> pos(4.0, 92.0), cls01(0.0, 1.0);
    for (int instance = 0; instance < 100; ++instance) {
        std::vector<GroundTruth> gts;
        for (int i = 0; i < 5; ++i) {
            GroundTruth g;
            const double cx = pos(rng), cy = pos(rng);
            const double wmax = 2.0 * std::min(cx, 96.0 - cx);
            const double hmax = 2.0 * std::min(cy, 96.0 - cy);
            std::uniform_real_distribution<double> ws(2.2, std::min(44.0, wmax));
            std::uniform_real_distribution<double> hs(2.2, std::min(44.0, hmax));
            g.box = {static_cast<float>(cx), static_cast<float>(cy),
                     static_cast<float>(ws(rng)), static_cast<float>(hs(rng))};
            g.class_id = static_cast<int>(cls01(rng) * 3) % 3;
            gts.push_back(g);
        }
        const auto assigns = assign_targets(gts, cfg);
        REQUIRE(assigns.size() == gts.size());
        for (std::size_t i = 0; i < gts.size(); ++i) {
            // exhaustive scan in (scale, anchor) order with strict improvement
            int bs = 0, ba = 0;
            double best = -1.0;
            for (int s = 0; s < cfg.num_scales(); ++s) {
                const auto anchors = cfg.anchors_of(s);
                for (int ai = 0; ai < static_cast<int>(anchors.size()); ++ai) {
                    const Box shape{gts[i].box.cx, gts[i].box.cy,
                                    anchors[static_cast<std::size_t>(ai)].w,
                                    anchors[static_cast<std::size_t>(ai)].h};
                    const double v = iou(shape, gts[i].box);
                    if (v > best) {
                        best = v;
                        bs = s;
                        ba = ai;
                    }
                }
            }
            const Assignment& a = assigns[i];
            CHECK(a.scale == bs);
            CHECK(a.anchor == ba);
            const int stride = cfg.stride_of(bs), grid = cfg.grid_of(bs);
            CHECK(a.gx == std::min(static_cast<int>(gts[i].box.cx / stride), grid - 1));
            CHECK(a.gy == std::min(static_cast<int>(gts[i].box.cy / stride), grid - 1));
            CHECK(a.class_id == gts[i].class_id);
        }
    }

    // offending ground truths are reported by index
    std::vector<GroundTruth> bad = {{{20, 20, 10, 10}, 0}, {{40, 40, 8, 8}, 1},
                                    {{60, 60, 0.5f, 8}, 2}};
    try {
        assign_targets(bad, cfg);
        FAIL("degenerate ground truth accepted");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("#2") != std::string::npos);
    }
    bad[2] = {{95, 95, 8, 8}, 2};  // x2 = 99 > 96
    CHECK_THROWS_AS(assign_targets(bad, cfg), std::invalid_argument);
    bad[2] = {{60, 60, 8, 8}, 3};  // class out of range
    CHECK_THROWS_AS(assign_targets(bad, cfg), std::invalid_argument);
}

TEST_CASE("box encoding inverts the cell transform") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int strides[4] = {4, 8, 16, 32};
    int done = 0;
    while (done < 500) {
        const int stride = strides[static_cast<int>(u01(rng) * 4) % 4];
        const int grid = 416 / stride;
        const double cx = u01(rng) * 414.0 + 1.0, cy = u01(rng) * 414.0 + 1.0;
        const double fx = cx / stride - std::floor(cx / stride);
        const double fy = cy / stride - std::floor(cy / stride);
        if (fx < 0.02 || fx > 0.98 || fy < 0.02 || fy > 0.98) continue;
        const double w = u01(rng) * 198.0 + 2.0, h = u01(rng) * 198.0 + 2.0;
        // keep the anchor within a factor of 3 so tw/th stay inside the clamp
        const AnchorBox anchor{static_cast<float>(w * (u01(rng) * (3.0 - 1.0 / 3) + 1.0 / 3)),
                               static_cast<float>(h * (u01(rng) * (3.0 - 1.0 / 3) + 1.0 / 3))};
        const Box b{static_cast<float>(cx), static_cast<float>(cy), static_cast<float>(w),
                    static_cast<float>(h)};
        const EncodedBox e = encode_box(b, stride, anchor, grid);
        const Box back = hand_decode(e.tx, e.ty, e.tw, e.th, e.gx, e.gy, stride, anchor);
        CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-4));
        CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-4));
        CHECK(back.w == doctest::Approx(b.w).epsilon(1e-4));
        CHECK(back.h == doctest::Approx(b.h).epsilon(1e-4));
        ++done;
    }

    const AnchorBox a{8, 8};
    CHECK_THROWS_AS(encode_box({8.0f, 10.0f, 4, 4}, 4, a, 104), std::invalid_argument);
    CHECK_THROWS_AS(encode_box({420.0f, 10.0f, 4, 4}, 4, a, 104), std::invalid_argument);
    CHECK_THROWS_AS(encode_box({10.0f, 10.0f, 4, 4}, 0, a, 104), std::invalid_argument);
    CHECK_THROWS_AS(encode_box({10.0f, 10.0f, -4, 4}, 4, a, 104), std::invalid_argument);
}

TEST_CASE("loss components follow their definitions") {
    const DetectorConfig cfg = tiny_config();
    const int fields = 5 + cfg.num_classes;
    auto zero_outputs = [&] {
        std::vector<Tensor> outs;
        for (int s = 0; s < cfg.num_scales(); ++s)
            outs.emplace_back(
                std::vector<int>{cfg.head_channels(), cfg.grid_of(s), cfg.grid_of(s)});
        return outs;
    };
    std::size_t all_cells = 0;
    for (int s = 0; s < cfg.num_scales(); ++s)
        all_cells += static_cast<std::size_t>(cfg.anchors_per_scale) * cfg.grid_of(s) *
                     cfg.grid_of(s);

    // no assignments: only the objectness term remains, log(2) per zero logit
    auto outs = zero_outputs();
    const LossBreakdown empty = total_loss(outs, {}, cfg);
    CHECK(empty.coord == 0.0);
    CHECK(empty.cls == 0.0);
    CHECK(empty.obj == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(empty.total == doctest::Approx(empty.obj).epsilon(1e-12));

    // a planted perfect prediction drives coord and cls to (numerically) zero
    std::vector<GroundTruth> gts = {{{33.0f, 41.0f, 14.0f, 22.0f}, 2}};
    const auto assigns = assign_targets(gts, cfg);
    REQUIRE(assigns.size() == 1);
    const Assignment& a = assigns[0];
    const int stride = cfg.stride_of(a.scale);
    const AnchorBox anchor = cfg.anchors_of(a.scale)[static_cast<std::size_t>(a.anchor)];
    const EncodedBox e = encode_box(gts[0].box, stride, anchor, cfg.grid_of(a.scale));
    Tensor& o = outs[static_cast<std::size_t>(a.scale)];
    const int base = a.anchor * fields;
    o[flat(o, base + 0, a.gy, a.gx)] = static_cast<float>(e.tx);
    o[flat(o, base + 1, a.gy, a.gx)] = static_cast<float>(e.ty);
    o[flat(o, base + 2, a.gy, a.gx)] = static_cast<float>(e.tw);
    o[flat(o, base + 3, a.gy, a.gx)] = static_cast<float>(e.th);
    o[flat(o, base + 4, a.gy, a.gx)] = 20.0f;
    o[flat(o, base + 5 + 2, a.gy, a.gx)] = 20.0f;
    const LossBreakdown perfect = total_loss(outs, assigns, cfg);
    CHECK(perfect.coord < 1e-6);
    // true class near 0, two zero-logit classes at log 2 each
    CHECK(perfect.cls == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
    const double want_obj =
        (softplus(20.0) - 20.0 + static_cast<double>(all_cells - 1) * std::log(2.0)) /
        static_cast<double>(all_cells);
    CHECK(perfect.obj == doctest::Approx(want_obj).epsilon(1e-9));
    CHECK(perfect.total ==
          doctest::Approx(perfect.coord + perfect.cls + perfect.obj).epsilon(1e-12));

    // objectness hand value for one live background logit
    auto outs2 = zero_outputs();
    outs2[1][flat(outs2[1], 4, 3, 5)] = 3.0f;  // anchor 0, channel 4 is objectness
    const LossBreakdown bg = total_loss(outs2, {}, cfg);
    const double want_bg =
        (softplus(3.0) + static_cast<double>(all_cells - 1) * std::log(2.0)) /
        static_cast<double>(all_cells);
    CHECK(bg.obj == doctest::Approx(want_bg).epsilon(1e-9));

    // wrong head shapes are rejected
    auto outs3 = zero_outputs();
    outs3.pop_back();
    CHECK_THROWS_AS(total_loss(outs3, {}, cfg), std::invalid_argument);
    auto outs4 = zero_outputs();
    outs4[0] = Tensor({cfg.head_channels() + 1, cfg.grid_of(0), cfg.grid_of(0)});
    CHECK_THROWS_AS(total_loss(outs4, {}, cfg), std::invalid_argument);
}

TEST_CASE("loss gradient matches measured central differences") {
    const DetectorConfig cfg = tiny_config();
    const int fields = 5 + cfg.num_classes;
    std::vector<GroundTruth> gts = {{{20.0f, 20.5f, 10.0f, 14.0f}, 0},
                                    {{50.0f, 44.5f, 24.0f, 20.0f}, 1},
                                    {{70.0f, 30.5f, 36.0f, 32.0f}, 2}};
    const auto assigns = assign_targets(gts, cfg);

    std::mt19937_64 rng(24);
    std::vector<Tensor> outs;
    for (int s = 0; s < cfg.num_scales(); ++s)
        outs.push_back(Tensor::random_uniform(
            {cfg.head_channels(), cfg.grid_of(s), cfg.grid_of(s)}, -1.2f, 1.2f, rng));
    const auto grads = total_loss_grad(outs, assigns, cfg);
    REQUIRE(grads.size() == outs.size());
    for (std::size_t s = 0; s < outs.size(); ++s) REQUIRE(grads[s].shape() == outs[s].shape());

    const double eps = 1e-3;
    auto probe = [&](int s, std::size_t idx) {
        Tensor& o = outs[static_cast<std::size_t>(s)];
        const float orig = o[idx];
        o[idx] = static_cast<float>(static_cast<double>(orig) + eps);
        const float hi = o[idx];
        const double lhi = total_loss(outs, assigns, cfg).total;
        o[idx] = static_cast<float>(static_cast<double>(orig) - eps);
        const float lo = o[idx];
        const double llo = total_loss(outs, assigns, cfg).total;
        o[idx] = orig;
        const double slope = (lhi - llo) / (static_cast<double>(hi) - static_cast<double>(lo));
        const double g = grads[static_cast<std::size_t>(s)][idx];
        CHECK(std::abs(slope - g) <=
              1e-3 * std::max(std::abs(slope), std::abs(g)) + 2e-6);
    };

    int coord_checked = 0;
    for (const Assignment& a : assigns) {
        const Tensor& o = outs[static_cast<std::size_t>(a.scale)];
        const int stride = cfg.stride_of(a.scale);
        const AnchorBox anchor = cfg.anchors_of(a.scale)[static_cast<std::size_t>(a.anchor)];
        const int base = a.anchor * fields;
        const double tx = o[flat(o, base + 0, a.gy, a.gx)];
        const double ty = o[flat(o, base + 1, a.gy, a.gx)];
        const double tw = o[flat(o, base + 2, a.gy, a.gx)];
        const double th = o[flat(o, base + 3, a.gy, a.gx)];
        const Box pred = hand_decode(tx, ty, tw, th, a.gx, a.gy, stride, anchor);

        // largest box-space movement a logit probe can cause, for the kink
        // margin: centers move at most stride/4 per unit logit, sides scale
        // exponentially
        const double delta =
            2.0 * eps *
            std::max(stride / 4.0, std::max<double>(pred.w, pred.h));
        const double margin = 10.0 * delta;
        const double iw = std::min(pred.x2(), a.gt.x2()) - std::max(pred.x1(), a.gt.x1());
        const double ih = std::min(pred.y2(), a.gt.y2()) - std::max(pred.y1(), a.gt.y1());
        const double ew = std::max(pred.x2(), a.gt.x2()) - std::min(pred.x1(), a.gt.x1());
        const double eh = std::max(pred.y2(), a.gt.y2()) - std::min(pred.y1(), a.gt.y1());
        const bool smooth = std::abs(iw) > margin && std::abs(ih) > margin &&
                            std::abs(ew - eh) > margin &&
                            std::abs(pred.x1() - a.gt.x1()) > margin &&
                            std::abs(pred.x2() - a.gt.x2()) > margin &&
                            std::abs(pred.y1() - a.gt.y1()) > margin &&
                            std::abs(pred.y2() - a.gt.y2()) > margin;
        if (smooth) {
            for (int ch = 0; ch < 4; ++ch) probe(a.scale, flat(o, base + ch, a.gy, a.gx));
            coord_checked += 4;
        }
        // objectness and class terms are smooth everywhere
        probe(a.scale, flat(o, base + 4, a.gy, a.gx));
        for (int k = 0; k < cfg.num_classes; ++k)
            probe(a.scale, flat(o, base + 5 + k, a.gy, a.gx));
    }
    CHECK(coord_checked >= 8);

    // background objectness cells across every scale and anchor slot
    for (int s = 0; s < cfg.num_scales(); ++s)
        for (int an = 0; an < cfg.anchors_per_scale; ++an)
            probe(s, flat(outs[static_cast<std::size_t>(s)], an * fields + 4, 0,
                          cfg.grid_of(s) - 1));
    // a background class logit carries no gradient
    CHECK(grads[0][flat(grads[0], 0 * fields + 5, 0, 0)] == 0.0f);
}

TEST_CASE("forward emits one correctly shaped map per active scale") {
    DetectorConfig cfg = tiny_config();
    Detector det(cfg);
    det.random_init(7);
    std::mt19937_64 rng(25);
    const Tensor img = Tensor::random_uniform({3, 96, 96}, 0.0f, 1.0f, rng);
    const auto outs = det.forward(img);
    REQUIRE(outs.size() == 4);
    for (int s = 0; s < 4; ++s) {
        const int grid = 96 / kAllStrides[s];
        CHECK(outs[static_cast<std::size_t>(s)].shape() ==
              std::vector<int>{24, grid, grid});
    }
    // forward is a pure function
    const auto again = det.forward(img);
    for (std::size_t s = 0; s < outs.size(); ++s)
        for (std::size_t i = 0; i < outs[s].numel(); ++i)
            CHECK(outs[s][i] == again[s][i]);

    cfg.small_object_head = false;
    Detector three(cfg);
    three.random_init(7);
    const auto outs3 = three.forward(img);
    REQUIRE(outs3.size() == 3);
    CHECK(outs3[0].shape() == std::vector<int>{24, 12, 12});
    CHECK(outs3[2].shape() == std::vector<int>{24, 3, 3});
    CHECK(three.parameter_count() < det.parameter_count());

    CHECK_THROWS_AS(det.forward(Tensor({3, 96, 95})), std::invalid_argument);
    CHECK_THROWS_AS(det.forward(Tensor({1, 96, 96})), std::invalid_argument);
}

TEST_CASE("decode turns planted logits into one detection") {
    const DetectorConfig cfg = tiny_config();
    const Detector det(cfg);  // weights irrelevant, decode reads outputs only
    const int fields = 5 + cfg.num_classes;
    std::vector<Tensor> outs;
    for (int s = 0; s < cfg.num_scales(); ++s)
        outs.emplace_back(std::vector<int>{cfg.head_channels(), cfg.grid_of(s), cfg.grid_of(s)});

    // every zero cell scores sigmoid(0)^2 = 0.25, below a 0.3 threshold
    CHECK(det.decode(outs, 0.3).empty());

    const Box planted{33.0f, 41.0f, 14.0f, 22.0f};
    const AnchorBox anchor = cfg.anchors_of(0)[0];
    const EncodedBox e = encode_box(planted, cfg.stride_of(0), anchor, cfg.grid_of(0));
    Tensor& o = outs[0];
    o[flat(o, 0, e.gy, e.gx)] = static_cast<float>(e.tx);
    o[flat(o, 1, e.gy, e.gx)] = static_cast<float>(e.ty);
    o[flat(o, 2, e.gy, e.gx)] = static_cast<float>(e.tw);
    o[flat(o, 3, e.gy, e.gx)] = static_cast<float>(e.th);
    o[flat(o, 4, e.gy, e.gx)] = 20.0f;
    o[flat(o, 5 + 2, e.gy, e.gx)] = 20.0f;
    const auto dets = det.decode(outs, 0.5);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 2);
    CHECK(dets[0].score > 0.99f);
    CHECK(dets[0].box.cx == doctest::Approx(planted.cx).epsilon(1e-4));
    CHECK(dets[0].box.cy == doctest::Approx(planted.cy).epsilon(1e-4));
    CHECK(dets[0].box.w == doctest::Approx(planted.w).epsilon(1e-4));
    CHECK(dets[0].box.h == doctest::Approx(planted.h).epsilon(1e-4));

    // side logits are clamped before exponentiation
    o[flat(o, 2, e.gy, e.gx)] = 9.0f;
    const auto clamped = det.decode(outs, 0.5);
    REQUIRE(clamped.size() == 1);
    CHECK(clamped[0].box.w == doctest::Approx(anchor.w * std::exp(4.0)).epsilon(1e-5));

    CHECK_THROWS_AS(det.decode(outs, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(det.decode(outs, -0.1), std::invalid_argument);
    outs.pop_back();
    CHECK_THROWS_AS(det.decode(outs, 0.5), std::invalid_argument);

    // one anchor slot must not leak into another: plant the same logits in
    // anchor slot 1 of a fresh grid and the decoded anchor shape changes
    std::vector<Tensor> outs2;
    for (int s = 0; s < cfg.num_scales(); ++s)
        outs2.emplace_back(std::vector<int>{cfg.head_channels(), cfg.grid_of(s), cfg.grid_of(s)});
    Tensor& o2 = outs2[0];
    o2[flat(o2, fields + 4, e.gy, e.gx)] = 20.0f;
    o2[flat(o2, fields + 5, e.gy, e.gx)] = 20.0f;
    const auto slot1 = det.decode(outs2, 0.5);
    REQUIRE(slot1.size() == 1);
    const AnchorBox a1 = cfg.anchors_of(0)[1];
    CHECK(slot1[0].box.w == doctest::Approx(a1.w).epsilon(1e-5));
    CHECK(slot1[0].box.h == doctest::Approx(a1.h).epsilon(1e-5));
    CHECK(slot1[0].class_id == 0);
}

TEST_CASE("default configuration parameter budget stays pinned") {
    const Detector det{DetectorConfig{}};
    CHECK(det.parameter_count() == 1474936);

    const auto rows = det.layer_table();
    REQUIRE(!rows.empty());
    long table_params = 0;
    long long total_macs = 0;
    int attn_rows = 0;
    for (const auto& r : rows) {
        table_params += r.params;
        total_macs += r.macs;
        CHECK(!r.name.empty());
        CHECK(r.out_shape.find('x') != std::string::npos);
        if (r.msa != 0) {
            ++attn_rows;
            CHECK(r.wmsa != 0);
        }
    }
    // the profile covers exactly the stored parameters
    CHECK(table_params == det.parameter_count());
    CHECK(total_macs > 0);
    CHECK(attn_rows == 4);  // one windowed-attention row per head

    // on the 104-cell grid windowed attention is the cheaper path
    for (const auto& r : rows)
        if (r.name == "head.s4.attn") CHECK(r.wmsa < r.msa);
}

TEST_CASE("profile covers the parameters for reduced configurations too") {
    DetectorConfig cfg = tiny_config();
    {
        const Detector det(cfg);
        long sum = 0;
        for (const auto& r : det.layer_table()) sum += r.params;
        CHECK(sum == det.parameter_count());
    }
    cfg.small_object_head = false;
    const Detector det(cfg);
    long sum = 0;
    bool has_s4 = false;
    for (const auto& r : det.layer_table()) {
        sum += r.params;
        has_s4 = has_s4 || r.name.find(".s4") != std::string::npos;
    }
    CHECK(sum == det.parameter_count());
    CHECK(!has_s4);
}

TEST_CASE("random initialization is seeded and respects variance bounds") {
    const DetectorConfig cfg = tiny_config();
    Detector a(cfg), b(cfg), c(cfg);
    a.random_init(5);
    b.random_init(5);
    c.random_init(6);
    const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
    REQUIRE(pa.size() == pb.size());
    bool differs = false;
    long counted = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        counted += static_cast<long>(pa[i].second->numel());
        const bool is_var = pa[i].first.ends_with(".bn.var");
        for (std::size_t j = 0; j < pa[i].second->numel(); ++j) {
            const float v = (*pa[i].second)[j];
            CHECK(v == (*pb[i].second)[j]);
            if (v != (*pc[i].second)[j]) differs = true;
            if (is_var) {
                CHECK(v >= 0.9f);
                CHECK(v <= 1.1f);
            } else {
                CHECK(v >= -0.1f);
                CHECK(v <= 0.1f);
            }
        }
    }
    CHECK(differs);
    CHECK(counted == a.parameter_count());

    // registry names are unique
    std::vector<std::string> names;
    for (const auto& [n, t] : pa) names.push_back(n);
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
}

TEST_CASE("weights survive a save/load roundtrip and corruption is caught") {
    TempDir tmp;
    const DetectorConfig cfg = tiny_config();
    Detector src(cfg);
    src.random_init(31);
    const std::string path = (tmp.path / "tiny.dw").string();
    src.save_weights(path);

    Detector dst(cfg);
    dst.random_init(99);
    dst.load_weights(path);
    const auto ps = src.named_parameters(), pd = dst.named_parameters();
    REQUIRE(ps.size() == pd.size());
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = 0; j < ps[i].second->numel(); ++j)
            CHECK((*ps[i].second)[j] == (*pd[i].second)[j]);

    std::mt19937_64 rng(26);
    const Tensor img = Tensor::random_uniform({3, 96, 96}, 0.0f, 1.0f, rng);
    const auto a = src.forward(img), b = dst.forward(img);
    for (std::size_t s = 0; s < a.size(); ++s)
        for (std::size_t i = 0; i < a[s].numel(); ++i) CHECK(a[s][i] == b[s][i]);

    CHECK_THROWS_AS(src.save_weights("/nonexistent-dir/x.dw"), std::runtime_error);
    CHECK_THROWS_AS(dst.load_weights((tmp.path / "missing.dw").string()), std::runtime_error);

    // flip the magic
    std::string bytes;
    {
        std::ifstream is(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    const std::string bad_magic_path = (tmp.path / "magic.dw").string();
    {
        std::string copy = bytes;
        copy[0] = 'X';
        std::ofstream os(bad_magic_path, std::ios::binary);
        os.write(copy.data(), static_cast<std::streamsize>(copy.size()));
    }
    try {
        dst.load_weights(bad_magic_path);
        FAIL("bad magic accepted");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    // rename the first section: the loader names what it could not find
    const std::string renamed_path = (tmp.path / "renamed.dw").string();
    {
        std::string copy = bytes;
        const auto at = copy.find("backbone.stem0.conv.w");
        REQUIRE(at != std::string::npos);
        copy[at] = 'x';
        std::ofstream os(renamed_path, std::ios::binary);
        os.write(copy.data(), static_cast<std::streamsize>(copy.size()));
    }
    try {
        dst.load_weights(renamed_path);
        FAIL("renamed section accepted");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("backbone.stem0.conv.w") != std::string::npos);
    }

    // truncation anywhere inside the payload
    const std::string cut_path = (tmp.path / "cut.dw").string();
    {
        std::ofstream os(cut_path, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(dst.load_weights(cut_path), std::exception);

    // a model with different tensor shapes rejects the file by section name
    DetectorConfig other = tiny_config();
    other.growth = 16;
    Detector mismatched(other);
    try {
        mismatched.load_weights(path);
        FAIL("shape mismatch accepted");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("has shape") != std::string::npos);
    }
}
