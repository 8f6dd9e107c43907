#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsnet/attention.hpp"
#include "dsnet/blocks.hpp"
#include "dsnet/box.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

struct AnchorBox {
    float w = 0.0f, h = 0.0f;  // pixels at network input scale
};

// Full model description. Defaults give the 416-input, 8-class, four-scale
// configuration; switching small_object_head off drops the stride-4 path and
// leaves three heads.
struct DetectorConfig {
    int input_size = 416;
    int num_classes = 8;
    int anchors_per_scale = 3;
    bool small_object_head = true;
    Act act = Act::SiLU;

    // backbone: per-stage widths at strides 4/8/16/32 and CSP depths
    std::vector<int> stage_widths = {16, 32, 64, 128};
    std::vector<int> csp_depths = {3, 6, 6, 3};
    int dense_layers = 4;
    int growth = 16;
    std::vector<int> spp_kernels = {5, 9, 13};

    // attention
    int cbam_reduction = 16;
    int window = 4;
    int heads = 4;
    int mlp_ratio = 4;
    bool scale_qk = true;

    // anchors for all four strides, smallest scale first; entry i is used by
    // the head at stride kAllStrides[i]
    std::vector<std::vector<AnchorBox>> anchors;

    DetectorConfig();  // fills the fallback anchor set

    void validate() const;
    int num_scales() const { return small_object_head ? 4 : 3; }
    int stride_of(int scale) const;                     // active-scale index
    std::span<const AnchorBox> anchors_of(int scale) const;
    int grid_of(int scale) const { return input_size / stride_of(scale); }
    int head_channels() const { return anchors_per_scale * (5 + num_classes); }
};

inline constexpr int kAllStrides[4] = {4, 8, 16, 32};

// k-means over box shapes with 1 - IoU(shape, center) distance; seeded
// greedy-plus-plus init, mean updates, empty clusters reseeded to the
// farthest shape. Result sorted by area ascending (smallest-scale anchors
// first).
std::vector<AnchorBox> kmeans_anchors(std::span<const AnchorBox> shapes, int k,
                                      std::uint64_t seed, int iterations = 30);

// One ground truth mapped to its responsible (scale, anchor, cell). The
// responsible pair maximizes IoU between the gt and the anchor shape centered
// on the gt; ties prefer the smaller scale then the smaller anchor index.
struct Assignment {
    int scale = 0;
    int anchor = 0;
    int gx = 0, gy = 0;
    int class_id = 0;
    Box gt;
};

std::vector<Assignment> assign_targets(std::span<const GroundTruth> gts,
                                       const DetectorConfig& cfg);

// Analytic encode of a box into head logits for its responsible cell:
// tx = logit(cx/stride - gx) etc., tw = ln(w / anchor_w). Throws when the
// center sits exactly on a grid line (logit undefined) or outside the image.
struct EncodedBox {
    int gx = 0, gy = 0;
    double tx = 0, ty = 0, tw = 0, th = 0;
};

EncodedBox encode_box(const Box& b, int stride, const AnchorBox& anchor, int grid);

// Loss of one image against its assignments:
//   coord: mean CIoU loss of decoded boxes at assigned cells
//   cls:   mean (over assigned cells) of the summed per-class sigmoid
//          cross-entropies against the one-hot class
//   obj:   sigmoid cross-entropy of every objectness logit at every scale,
//          target 1 at assigned cells and 0 elsewhere, averaged over all
//   total: unweighted sum of the three
struct LossBreakdown {
    double total = 0, coord = 0, cls = 0, obj = 0;
};

LossBreakdown total_loss(std::span<const Tensor> outputs, std::span<const Assignment> assigns,
                         const DetectorConfig& cfg);

// d(total)/d(logit) for every head output element (same shapes as outputs).
// CIoU flows through the decode transform; the +-4 clamp zeroes tw/th
// gradients outside the clamp window.
std::vector<Tensor> total_loss_grad(std::span<const Tensor> outputs,
                                    std::span<const Assignment> assigns,
                                    const DetectorConfig& cfg);

// Per-layer profile row. Attention rows carry the global-vs-windowed
// operation counts for their (grid, channels, window) geometry.
struct LayerRow {
    std::string name;
    std::string out_shape;
    long params = 0;
    long long macs = 0;
    std::uint64_t msa = 0, wmsa = 0;  // nonzero only for attention rows
};

class Detector {
public:
    explicit Detector(DetectorConfig cfg);

    const DetectorConfig& config() const { return cfg_; }

    // image (3, input, input) -> one (B*(5+K), S, S) tensor per active scale
    std::vector<Tensor> forward(const Tensor& image) const;

    // cx = (gx + sigmoid(tx)) * stride, w = anchor_w * exp(clamp(tw, +-4));
    // score = sigmoid(obj) * max_class sigmoid(cls); keeps score >= threshold
    std::vector<Detection> decode(std::span<const Tensor> outputs,
                                  double score_threshold) const;

    // uniform [-0.1, 0.1] for every parameter except batch-norm variances,
    // which draw from [0.9, 1.1] to stay positive
    void random_init(std::uint64_t seed);

    long parameter_count() const;
    std::vector<LayerRow> layer_table() const;

    // ordered (name, tensor) registry backing the weight file
    std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;

    // weight container: magic "DW1\n", little-endian u32 section count, then
    // per section a u32 name length, the name bytes, and the tensor in the
    // DT1 encoding. The loader checks names and shapes against the registry
    // and reports the first offending section by name.
    void save_weights(const std::string& path) const;
    void load_weights(const std::string& path);

private:
    struct Stage {
        DenseBlock dense;
        ConvBnAct transition;
        CspBlock csp;
    };
    struct Fusion {
        ConvBnAct reduce;  // 1x1 on the concatenation
        ConvBnAct conv;    // 3x3 refine
        CbamWeights attn;
    };
    struct Head {
        StrBlockWeights attn;
        Tensor out_w;  // (B*(5+K), C, 1, 1)
        Tensor out_b;
    };

    std::vector<std::pair<std::string, Tensor*>> registry();

    DetectorConfig cfg_;
    ConvBnAct stem0_, stem1_;
    std::vector<Stage> stages_;
    std::vector<ConvBnAct> downs_;  // between stages
    SppBlock spp_;
    std::vector<ConvBnAct> laterals_;   // top-down 1x1 before upsample
    std::vector<Fusion> td_fusions_;    // top-down, deepest first
    std::vector<ConvBnAct> bu_downs_;   // bottom-up 3x3 stride-2
    std::vector<Fusion> bu_fusions_;
    std::vector<Head> heads_;
};

}  // namespace dsnet
