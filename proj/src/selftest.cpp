#include "dsnet/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unistd.h>
#include <vector>

#include "dsnet/attention.hpp"
#include "dsnet/blocks.hpp"
#include "dsnet/box.hpp"
#include "dsnet/cli.hpp"
#include "dsnet/dataio.hpp"
#include "dsnet/detector.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/rng.hpp"
#include "dsnet/tensor.hpp"
#include "dsnet/textfmt.hpp"

namespace fs = std::filesystem;

namespace dsnet {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error(what);
}

void require_close(double a, double b, double tol, const std::string& what) {
    if (!(std::abs(a - b) <= tol))
        throw std::runtime_error(what + ": " + fmt_g9(a) + " vs " + fmt_g9(b));
}

Box random_box(std::mt19937_64& rng, double lo = 5.0, double hi = 100.0) {
    Box b;
    b.cx = static_cast<float>(uniform(rng, lo, hi));
    b.cy = static_cast<float>(uniform(rng, lo, hi));
    b.w = static_cast<float>(uniform(rng, 1.0, 40.0));
    b.h = static_cast<float>(uniform(rng, 1.0, 40.0));
    return b;
}

// Small model used wherever a full graph is needed but speed matters.
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
               ("dsnet-selftest-" + std::to_string(static_cast<unsigned long>(::getpid())));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// ---- suites ---------------------------------------------------------------

void suite_tensor() {
    std::mt19937_64 rng(11);

    // 1x1 identity convolution leaves the input untouched
    Tensor x = Tensor::random_uniform({2, 5, 5}, -1.0f, 1.0f, rng);
    Tensor id({2, 2, 1, 1});
    id[0] = 1.0f;  // (o=0,c=0)
    id[3] = 1.0f;  // (o=1,c=1)
    Tensor y = conv2d(x, id, nullptr, 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i)
        require(x[i] == y[i], "identity conv changed a value");

    // all-ones 3x3 kernel sums the neighborhood
    Tensor ramp({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor summed = conv2d(ramp, ones, nullptr, 1, 1);
    require(summed.at(0, 1, 1) == 45.0f, "3x3 box filter center sum");
    require(summed.at(0, 0, 0) == 1 + 2 + 4 + 5, "3x3 box filter corner sum");

    // max pooling picks window maxima
    Tensor grid({1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    Tensor pooled = pool2d(grid, Pool::Max, 2, 2, 0);
    require(pooled.at(0, 0, 0) == 6 && pooled.at(0, 1, 1) == 16, "2x2 max pool values");

    // softmax rows sum to one
    Tensor logits = Tensor::random_uniform({4, 7}, -3.0f, 3.0f, rng);
    Tensor probs = softmax_lastaxis(logits);
    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += probs[static_cast<std::size_t>(r * 7 + c)];
        require_close(s, 1.0, 1e-6, "softmax row sum");
    }

    // container roundtrip is bitwise
    std::stringstream buf;
    write_dt1(buf, x);
    Tensor back = read_dt1(buf);
    require(back.shape() == x.shape(), "dt1 shape roundtrip");
    for (std::size_t i = 0; i < x.numel(); ++i)
        require(back[i] == x[i], "dt1 value roundtrip");
    std::stringstream bad("XXXX");
    try {
        read_dt1(bad);
        require(false, "dt1 accepted bad magic");
    } catch (const std::invalid_argument&) {
    }

    // numeric gradient of sum(x^2) is 2x
    std::vector<double> at = {0.5, -1.25, 2.0};
    auto f = [](std::span<const double> v) {
        double s = 0.0;
        for (double t : v) s += t * t;
        return s;
    };
    const std::vector<double> g = numeric_gradient(f, at, 1e-5);
    for (std::size_t i = 0; i < at.size(); ++i)
        require_close(g[i], 2.0 * at[i], 1e-6, "numeric gradient of x^2");
}

void suite_box() {
    std::mt19937_64 rng(22);
    for (int i = 0; i < 100; ++i) {
        const Box a = random_box(rng), b = random_box(rng);
        require(ciou_loss(a, a) == 0.0, "ciou(a,a) must be exactly 0");
        require_close(iou(a, b), iou(b, a), 0.0, "iou symmetry");
    }

    // disjoint unit squares ten apart on the x axis
    const Box u{0.5f, 0.5f, 1.0f, 1.0f}, v{10.5f, 0.5f, 1.0f, 1.0f};
    require_close(ciou_loss(u, v), 1.0 + 100.0 / 121.0, 1e-9, "disjoint unit squares");

    // greedy suppression equals an independent reimplementation
    for (int inst = 0; inst < 50; ++inst) {
        std::vector<Detection> dets;
        const int n = 1 + static_cast<int>(uniform_index(rng, 20));
        for (int i = 0; i < n; ++i) {
            Detection d;
            d.box = random_box(rng, 10.0, 40.0);
            d.class_id = static_cast<int>(uniform_index(rng, 3));
            d.score = static_cast<float>(uniform(rng, 0.05, 1.0));
            dets.push_back(d);
        }
        const double thr = 0.5;
        auto kept = nms(dets, thr);

        std::vector<std::size_t> order(dets.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
            if (dets[a].class_id != dets[b].class_id) return dets[a].class_id < dets[b].class_id;
            return a < b;
        });
        std::vector<Detection> expect;
        for (std::size_t idx : order) {
            bool ok = true;
            for (const Detection& k : expect)
                if (k.class_id == dets[idx].class_id && iou(k.box, dets[idx].box) > thr)
                    ok = false;
            if (ok) expect.push_back(dets[idx]);
        }
        require(kept.size() == expect.size(), "nms kept count differs from oracle");
        for (std::size_t i = 0; i < kept.size(); ++i)
            require(kept[i].score == expect[i].score && kept[i].class_id == expect[i].class_id &&
                        kept[i].box.cx == expect[i].box.cx,
                    "nms kept set differs from oracle");
    }

    // detections text roundtrip
    std::vector<DetectionRecord> recs;
    for (int i = 0; i < 10; ++i) {
        DetectionRecord r;
        r.image_id = "img_" + std::to_string(i);
        r.det.box = random_box(rng);
        r.det.class_id = i % 3;
        r.det.score = static_cast<float>(uniform(rng, 0.0, 1.0));
        recs.push_back(r);
    }
    std::stringstream buf;
    write_detections(buf, recs);
    const auto back = read_detections(buf);
    require(back.size() == recs.size(), "detections roundtrip count");
    for (std::size_t i = 0; i < recs.size(); ++i)
        require(back[i].image_id == recs[i].image_id && back[i].det.score == recs[i].det.score &&
                    back[i].det.box.w == recs[i].det.box.w,
                "detections roundtrip values");
}

void suite_metrics() {
    // detections identical to ground truth score a perfect report
    std::mt19937_64 rng(33);
    Dataset data(4);
    for (auto& sample : data)
        for (int i = 0; i < 3; ++i) {
            GroundTruth gt;
            gt.box = random_box(rng);
            gt.class_id = i % 2;
            sample.gts.push_back(gt);
            sample.dets.push_back({gt.box, gt.class_id, 1.0f});
        }
    const MetricsReport rep = evaluate(data, 2, 0.5, 0.25);
    require(rep.p == 1.0 && rep.r == 1.0 && rep.f1 == 1.0, "perfect detections give P=R=F1=1");
    require(rep.map == 1.0, "perfect detections give mAP=1");
    require(rep.map50_95 == 1.0, "perfect detections give AP50:95=1");

    // one TP above one FP: envelope area is exactly 1
    Dataset tiny(1);
    GroundTruth gt;
    gt.box = Box{20, 20, 10, 10};
    tiny[0].gts.push_back(gt);
    tiny[0].dets.push_back({gt.box, 0, 0.9f});
    tiny[0].dets.push_back({Box{60, 60, 10, 10}, 0, 0.8f});
    require_close(average_precision(tiny, 0, 0.5).ap, 1.0, 0.0, "TP-then-FP AP");

    // false positives only: all-zero metrics, envelope empty
    Dataset fponly(1);
    fponly[0].gts.push_back(gt);
    fponly[0].dets.push_back({Box{60, 60, 4, 4}, 0, 0.7f});
    const MetricsReport rep2 = evaluate(fponly, 1, 0.5, 0.25);
    require(rep2.p == 0.0 && rep2.r == 0.0 && rep2.map == 0.0, "FP-only metrics are zero");

    // rank invariance: halving every score keeps AP
    Dataset scaled = tiny;
    for (auto& s : scaled)
        for (auto& d : s.dets) d.score *= 0.5f;
    require(average_precision(scaled, 0, 0.5).ap == average_precision(tiny, 0, 0.5).ap,
            "AP must depend on ranks only");
}

void suite_blocks() {
    std::mt19937_64 rng(44);
    const Tensor x = Tensor::random_uniform({8, 6, 6}, -1.0f, 1.0f, rng);

    // freshly made blocks are identity-normed zero convs
    const ConvBnAct zero = ConvBnAct::make(8, 4, 3, 1, Act::Identity);
    const Tensor y = conv_bn_act(x, zero);
    for (std::size_t i = 0; i < y.numel(); ++i) require(y[i] == 0.0f, "zero conv must emit 0");

    // dense growth and csp/spp shape preservation
    const DenseBlock dense = DenseBlock::make(8, 3, 4, Act::SiLU);
    require(dense_block(x, dense).dim(0) == 8 + 3 * 4, "dense block channel growth");
    const CspBlock csp = CspBlock::make(8, 8, 2, Act::SiLU);
    require(csp_block(x, csp).shape() == x.shape(), "csp block shape");
    const SppBlock spp = SppBlock::make(8, {3, 5}, Act::SiLU);
    require(spp_block(x, spp).shape() == x.shape(), "spp block shape");

    // zero-weight attention gates pass exactly a quarter of the input
    const CbamWeights cw = CbamWeights::make(8, 4);
    const Tensor gated = cbam(x, cw);
    for (std::size_t i = 0; i < x.numel(); ++i)
        require(gated[i] == 0.25f * x[i], "zero-weight gates must scale by exactly 0.25");
}

void suite_attention() {
    std::mt19937_64 rng(55);

    // partition/reverse roundtrip is bitwise, padding included
    for (const auto& [h, w, m] : std::vector<std::array<int, 3>>{{5, 7, 4}, {8, 8, 4}, {3, 9, 7}}) {
        const Tensor f = Tensor::random_uniform({h, w, 3}, -1.0f, 1.0f, rng);
        const auto [windows, grid] = window_partition(f, m);
        const Tensor back = window_reverse(windows, grid);
        require(back.shape() == f.shape(), "window roundtrip shape");
        for (std::size_t i = 0; i < f.numel(); ++i)
            require(back[i] == f[i], "window roundtrip values");
    }

    // zero-weight encoder pair is the identity
    const Tensor f = Tensor::random_uniform({6, 6, 8}, -1.0f, 1.0f, rng);
    const StrBlockWeights zw = StrBlockWeights::make(8, 4, 2, 4);
    const Tensor z = str_block_pair(f, zw, true);
    for (std::size_t i = 0; i < f.numel(); ++i)
        require(z[i] == f[i], "zero-weight encoder must be identity");

    // attention rows are stochastic and honor the shift mask
    MsaWeights mw = MsaWeights::make(8, 2);
    for (Tensor* t : {&mw.wq, &mw.wk, &mw.wv, &mw.wo})
        *t = Tensor::random_uniform(t->shape(), -0.3f, 0.3f, rng);
    AttentionTrace trace;
    sw_msa(f, mw, 4, 2, true, &trace);
    const auto mask = attention_mask(6, 6, 4, 2);
    require(trace.windows.size() == mask.size(), "trace window count");
    for (std::size_t wi = 0; wi < trace.windows.size(); ++wi) {
        const Tensor& a = trace.windows[wi];
        const int heads = a.dim(0), t = a.dim(1);
        for (int hd = 0; hd < heads; ++hd)
            for (int q = 0; q < t; ++q) {
                double sum = 0.0;
                bool any = false;
                for (int k = 0; k < t; ++k) {
                    const float v = a[static_cast<std::size_t>((hd * t + q) * t + k)];
                    if (!mask[wi][static_cast<std::size_t>(q)][static_cast<std::size_t>(k)])
                        require(v == 0.0f, "masked attention entry must be exactly 0");
                    sum += v;
                    any = any || mask[wi][static_cast<std::size_t>(q)][static_cast<std::size_t>(k)];
                }
                if (any) require_close(sum, 1.0, 1e-6, "attention row sum");
            }
    }

    // cost model fixed point
    const ComplexityCount cc = complexity(8, 8, 16, 4);
    require(cc.msa == 196608ull && cc.w_msa == 98304ull, "complexity fixed point");
}

void suite_detector() {
    const DetectorConfig cfg = tiny_config();
    Detector det(cfg);
    det.random_init(7);

    // shape contract at the tiny size: grids input/stride, B*(5+K) channels
    std::mt19937_64 rng(66);
    const Tensor img = Tensor::random_uniform({3, cfg.input_size, cfg.input_size}, 0.0f, 1.0f, rng);
    const auto outs = det.forward(img);
    require(static_cast<int>(outs.size()) == cfg.num_scales(), "head count");
    for (int s = 0; s < cfg.num_scales(); ++s) {
        require(outs[static_cast<std::size_t>(s)].dim(0) == cfg.head_channels(),
                "head channel count");
        require(outs[static_cast<std::size_t>(s)].dim(1) == cfg.grid_of(s), "head grid size");
    }

    // encode/decode are inverse transforms
    for (int i = 0; i < 100; ++i) {
        const int scale = static_cast<int>(uniform_index(rng, cfg.num_scales()));
        const int stride = cfg.stride_of(scale);
        const int grid = cfg.grid_of(scale);
        const AnchorBox anchor = cfg.anchors_of(scale)[0];
        Box b;
        b.cx = static_cast<float>(uniform(rng, 0.51, cfg.input_size - 0.51));
        b.cy = static_cast<float>(uniform(rng, 0.51, cfg.input_size - 0.51));
        b.w = static_cast<float>(anchor.w * std::exp(uniform(rng, -1.5, 1.5)));
        b.h = static_cast<float>(anchor.h * std::exp(uniform(rng, -1.5, 1.5)));
        const EncodedBox e = encode_box(b, stride, anchor, grid);
        const double cx = (e.gx + activate(Act::Sigmoid, e.tx)) * stride;
        const double cy = (e.gy + activate(Act::Sigmoid, e.ty)) * stride;
        const double wv = anchor.w * std::exp(e.tw);
        const double hv = anchor.h * std::exp(e.th);
        require_close(cx, b.cx, 1e-4, "encode/decode cx");
        require_close(cy, b.cy, 1e-4, "encode/decode cy");
        require_close(wv, b.w, 1e-4, "encode/decode w");
        require_close(hv, b.h, 1e-4, "encode/decode h");
    }

    // assignment picks the anchor of maximal shape IoU
    std::vector<GroundTruth> gts;
    for (int i = 0; i < 20; ++i) {
        GroundTruth g;
        g.box.w = static_cast<float>(uniform(rng, 4.0, 60.0));
        g.box.h = static_cast<float>(uniform(rng, 4.0, 60.0));
        g.box.cx = static_cast<float>(uniform(rng, g.box.w / 2 + 0.5, cfg.input_size - g.box.w / 2 - 0.5));
        g.box.cy = static_cast<float>(uniform(rng, g.box.h / 2 + 0.5, cfg.input_size - g.box.h / 2 - 0.5));
        g.class_id = static_cast<int>(uniform_index(rng, cfg.num_classes));
        gts.push_back(g);
    }
    const auto assigns = assign_targets(gts, cfg);
    require(assigns.size() == gts.size(), "one assignment per ground truth");
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const Assignment& a = assigns[i];
        const double got = iou(Box{gts[i].box.cx, gts[i].box.cy,
                                   cfg.anchors_of(a.scale)[static_cast<std::size_t>(a.anchor)].w,
                                   cfg.anchors_of(a.scale)[static_cast<std::size_t>(a.anchor)].h},
                               gts[i].box);
        for (int s = 0; s < cfg.num_scales(); ++s)
            for (const AnchorBox& anc : cfg.anchors_of(s))
                require(iou(Box{gts[i].box.cx, gts[i].box.cy, anc.w, anc.h}, gts[i].box) <=
                            got + 1e-12,
                        "assignment must maximize anchor IoU");
        require(a.gx >= 0 && a.gx < cfg.grid_of(a.scale), "assignment cell in range");
    }

    // analytic loss gradient matches central differences
    std::vector<Tensor> logits;
    for (int s = 0; s < cfg.num_scales(); ++s)
        logits.push_back(Tensor::random_uniform(
            {cfg.head_channels(), cfg.grid_of(s), cfg.grid_of(s)}, -1.0f, 1.0f, rng));
    const std::vector<GroundTruth> two(gts.begin(), gts.begin() + 2);
    const auto asg = assign_targets(two, cfg);
    const auto grads = total_loss_grad(logits, asg, cfg);
    for (int trial = 0; trial < 12; ++trial) {
        const int s = static_cast<int>(uniform_index(rng, cfg.num_scales()));
        Tensor& o = logits[static_cast<std::size_t>(s)];
        const std::size_t idx = uniform_index(rng, o.numel());
        const float orig = o[idx];
        const float hi = orig + 1e-3f, lo = orig - 1e-3f;
        o[idx] = hi;
        const double fh = total_loss(logits, asg, cfg).total;
        o[idx] = lo;
        const double fl = total_loss(logits, asg, cfg).total;
        o[idx] = orig;
        const double num = (fh - fl) / (static_cast<double>(hi) - static_cast<double>(lo));
        const double ana = grads[static_cast<std::size_t>(s)][idx];
        require(std::abs(num - ana) <= 1e-4 + 1e-3 * std::abs(ana),
                "loss gradient vs central difference");
    }
}

void suite_weights() {
    const DetectorConfig cfg = tiny_config();
    Detector det(cfg);
    det.random_init(9);
    TempDir tmp;
    const std::string path = (tmp.path / "model.dw1").string();
    det.save_weights(path);

    Detector loaded(cfg);
    loaded.load_weights(path);
    const auto a = det.named_parameters();
    const auto b = loaded.named_parameters();
    require(a.size() == b.size(), "weights roundtrip registry size");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(a[i].first == b[i].first, "weights roundtrip names");
        require(seen.insert(a[i].first).second, "duplicate registry name");
        for (std::size_t j = 0; j < a[i].second->numel(); ++j)
            require((*a[i].second)[j] == (*b[i].second)[j], "weights roundtrip values");
    }

    // corrupting a section name must produce an error naming a section
    std::string bytes = read_text_file(path);
    const std::string target = "backbone.stem0.conv.w";
    const std::size_t at = bytes.find(target);
    require(at != std::string::npos, "expected section name in the file");
    bytes[at] = 'X';
    const std::string bad = (tmp.path / "bad.dw1").string();
    write_text_file(bad, bytes);
    try {
        loaded.load_weights(bad);
        require(false, "loader accepted a corrupted section name");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        require(msg.find("section") != std::string::npos &&
                    msg.find("ackbone.stem0.conv.w") != std::string::npos,
                "loader error must name the offending section");
    }

    // truncation is detected
    write_text_file((tmp.path / "trunc.dw1").string(), bytes.substr(0, bytes.size() / 2));
    try {
        loaded.load_weights((tmp.path / "trunc.dw1").string());
        require(false, "loader accepted a truncated file");
    } catch (const std::exception&) {
    }
}

void suite_dataio() {
    std::mt19937_64 rng(77);
    TempDir tmp;

    // taxonomy is a bijection that rejects strangers
    for (int i = 0; i < 8; ++i) require(class_index(class_name(i)) == i, "taxonomy bijection");
    try {
        class_index("D99");
        require(false, "taxonomy accepted an unknown class");
    } catch (const std::invalid_argument&) {
    }

    // annotation serialize/parse identity
    ImageAnnotation anno;
    anno.id = "sample_01";
    anno.width = 600;
    anno.height = 400;
    for (int i = 0; i < 5; ++i) {
        AnnoBox b;
        b.x1 = static_cast<float>(uniform(rng, 0.0, 250.0));
        b.y1 = static_cast<float>(uniform(rng, 0.0, 150.0));
        b.x2 = b.x1 + static_cast<float>(uniform(rng, 5.0, 300.0));
        b.y2 = b.y1 + static_cast<float>(uniform(rng, 5.0, 200.0));
        b.x2 = std::min(b.x2, 600.0f);
        b.y2 = std::min(b.y2, 400.0f);
        b.class_id = i % 8;
        anno.boxes.push_back(b);
    }
    const VocParseResult parsed = parse_voc(write_voc(anno));
    require(parsed.clamped == 0, "roundtrip should not clamp");
    require(parsed.anno.id == anno.id && parsed.anno.width == anno.width, "roundtrip header");
    require(parsed.anno.boxes.size() == anno.boxes.size(), "roundtrip box count");
    for (std::size_t i = 0; i < anno.boxes.size(); ++i)
        require(parsed.anno.boxes[i].x1 == anno.boxes[i].x1 &&
                    parsed.anno.boxes[i].y2 == anno.boxes[i].y2 &&
                    parsed.anno.boxes[i].class_id == anno.boxes[i].class_id,
                "roundtrip box values");

    // inverted boxes are rejected with the object index
    ImageAnnotation badanno = anno;
    std::swap(badanno.boxes[2].x1, badanno.boxes[2].x2);
    try {
        parse_voc(write_voc(badanno));
        require(false, "parser accepted an inverted box");
    } catch (const std::invalid_argument& e) {
        require(std::string(e.what()).find("object #2") != std::string::npos,
                "inverted-box error must carry the object index");
    }

    // image bytes roundtrip through the PPM container
    Tensor img = Tensor::random_uniform({3, 9, 13}, 0.0f, 1.0f, rng);
    const std::string ppath = (tmp.path / "img.ppm").string();
    write_ppm(ppath, img);
    const Tensor quantized = read_ppm(ppath);
    write_ppm((tmp.path / "img2.ppm").string(), quantized);
    require(read_text_file(ppath) != "", "ppm file written");
    require(read_text_file((tmp.path / "img2.ppm").string()) == read_text_file(ppath),
            "quantized image must roundtrip byte-exactly");

    // split partitions and is seed-stable
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    const auto [tr1, va1] = split(ids, {42, 0.8});
    const auto [tr2, va2] = split(ids, {42, 0.8});
    require(tr1.size() == 8 && va1.size() == 2, "80/20 split sizes");
    require(tr1 == tr2 && va1 == va2, "split determinism");
    std::set<std::string> all(tr1.begin(), tr1.end());
    all.insert(va1.begin(), va1.end());
    require(all.size() == ids.size(), "split partition property");

    // letterbox: 600x300 scales by 416/600 and pads 104 rows per side
    Tensor wide = Tensor::full({3, 300, 600}, 0.25f);
    const auto [canvas, map] = letterbox(wide, 416);
    require(canvas.dim(1) == 416 && canvas.dim(2) == 416, "letterbox canvas size");
    require(map.pad_y == 104 && map.pad_x == 0, "letterbox padding arithmetic");
    require(canvas.at(0, 0, 0) == 0.5f && canvas.at(0, 208, 300) == 0.25f,
            "letterbox gray border and content");
    const Box src{123.0f, 45.0f, 67.0f, 89.0f};
    const Box round = map.invert(map.apply(src));
    require_close(round.cx, src.cx, 1e-3, "letterbox inverse cx");
    require_close(round.w, src.w, 1e-3, "letterbox inverse w");

    // solid-color mosaic fills the canvas with that color
    std::vector<Tensor> quads(4, Tensor::full({3, 50, 40}, 0.75f));
    std::vector<ImageAnnotation> qannos(4);
    for (auto& qa : qannos) {
        qa.width = 40;
        qa.height = 50;
    }
    const Augmented mz = mosaic_at(quads, qannos, 64, 30, 20);
    for (std::size_t i = 0; i < mz.image.numel(); ++i)
        require(mz.image[i] == 0.75f, "solid mosaic must stay solid");

    // mixup extremes and empty cutmix regions degenerate to the inputs
    const Tensor a = Tensor::full({3, 8, 8}, 0.0f), b = Tensor::full({3, 8, 8}, 1.0f);
    const Tensor ab = mixup(a, b, 0.5);
    for (std::size_t i = 0; i < ab.numel(); ++i) require(ab[i] == 0.5f, "mixup midpoint");
    const Augmented cm = cutmix(a, {}, b, {}, Region{0, 0, 0, 0});
    for (std::size_t i = 0; i < cm.image.numel(); ++i)
        require(cm.image[i] == a[i], "empty cutmix region must return image a");

    // synthetic data is deterministic and in bounds
    const auto s1 = synth_generate(3, 5);
    const auto s2 = synth_generate(3, 5);
    require(s1.size() == 3 && s1[0].anno.id == "synth_000000", "synth ids");
    for (std::size_t i = 0; i < s1.size(); ++i) {
        require(s1[i].anno.boxes.size() == s2[i].anno.boxes.size(),
                "synth annotation determinism");
        for (std::size_t j = 0; j < s1[i].anno.boxes.size(); ++j)
            require(s1[i].anno.boxes[j].x1 == s2[i].anno.boxes[j].x1 &&
                        s1[i].anno.boxes[j].y2 == s2[i].anno.boxes[j].y2 &&
                        s1[i].anno.boxes[j].class_id == s2[i].anno.boxes[j].class_id,
                    "synth annotation determinism");
        for (std::size_t j = 0; j < s1[i].image.numel(); ++j)
            require(s1[i].image[j] == s2[i].image[j], "synth image determinism");
        require(!s1[i].anno.boxes.empty(), "synth images carry objects");
        for (const AnnoBox& bx : s1[i].anno.boxes)
            require(bx.x1 >= 0 && bx.y1 >= 0 && bx.x2 <= s1[i].anno.width &&
                        bx.y2 <= s1[i].anno.height && bx.x2 > bx.x1 && bx.y2 > bx.y1,
                    "synth boxes in bounds");
    }
}

void suite_config() {
    TempDir tmp;
    RunConfig rc;
    apply_config_value(rc, "seed", "17", "test");
    apply_config_value(rc, "score_thresh", "0.5", "test");
    apply_config_value(rc, "small_object_head", "false", "test");
    require(rc.seed == 17 && rc.score_thresh == 0.5 && !rc.small_object_head,
            "config assignment");
    try {
        apply_config_value(rc, "no_such_key", "1", "test");
        require(false, "config accepted an unknown key");
    } catch (const std::invalid_argument&) {
    }

    const std::string path = (tmp.path / "run.cfg").string();
    write_text_file(path,
                    "# comment\n"
                    "seed = 3\n"
                    "input_size = 416\n"
                    "act = relu  # trailing comment\n");
    const RunConfig rc2 = load_config_file(path);
    require(rc2.seed == 3 && rc2.act == "relu", "config file parsing");

    // anchor overrides must supply every pair
    RunConfig rc3;
    rc3.anchors = {1, 2, 3};
    try {
        to_detector_config(rc3);
        require(false, "config accepted a short anchor list");
    } catch (const std::invalid_argument&) {
    }
}

}  // namespace

int run_selftest(std::ostream& os) {
    struct Suite {
        const char* name;
        void (*fn)();
    };
    const Suite suites[] = {
        {"tensor", suite_tensor},     {"box", suite_box},
        {"metrics", suite_metrics},   {"blocks", suite_blocks},
        {"attention", suite_attention}, {"detector", suite_detector},
        {"weights", suite_weights},   {"dataio", suite_dataio},
        {"config", suite_config},
    };

    int failures = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (const Suite& s : suites) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            s.fn();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty()) {
            os << "suite " << s.name << ": ok (" << fmt_fixed(secs, 2) << " s)\n";
        } else {
            ++failures;
            os << "suite " << s.name << ": FAIL (" << fmt_fixed(secs, 2) << " s): " << error
               << "\n";
        }
    }
    const double total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const int n = static_cast<int>(sizeof(suites) / sizeof(suites[0]));
    os << "selftest: " << (n - failures) << "/" << n << " suites passed ("
       << fmt_fixed(total, 2) << " s)\n";
    return failures;
}

}  // namespace dsnet
