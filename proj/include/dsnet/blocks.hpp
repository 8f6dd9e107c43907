#pragma once

#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

// Conv -> inference batch norm -> activation. The conv carries no bias (the
// norm's shift plays that role). make() produces zero conv weights and an
// identity norm (mean 0, var 1, gamma 1, beta 0); real values come from the
// weight file or a seeded random init.
struct ConvBnAct {
    Tensor w;  // (out, in, k, k)
    Tensor bn_mean, bn_var, bn_gamma, bn_beta;
    int stride = 1;
    int padding = 0;
    Act act = Act::SiLU;

    static ConvBnAct make(int in_ch, int out_ch, int k, int stride, Act act);
    int in_channels() const { return w.dim(1); }
    int out_channels() const { return w.dim(0); }
    long parameter_count() const;
};

constexpr double kBnEps = 1e-5;

Tensor conv_bn_act(const Tensor& x, const ConvBnAct& cfg);

// Densely connected stack: layer i consumes the concatenation of the block
// input and every previous layer's output, and contributes `growth` channels
// via a 3x3 stride-1 conv_bn_act. Output is input ++ all n contributions,
// so channels grow from C to C + n*growth.
struct DenseBlock {
    std::vector<ConvBnAct> layers;
    int in_channels = 0;
    int growth = 0;

    static DenseBlock make(int in_ch, int n, int growth, Act act);
    int out_channels() const {
        return in_channels + static_cast<int>(layers.size()) * growth;
    }
    long parameter_count() const;
};

Tensor dense_block(const Tensor& x, const DenseBlock& blk);

// Cross-stage-partial block: even channel split; the first half runs through
// `depth` residual bottlenecks (1x1 reduce to half width, 3x3 back, add),
// the second half bypasses; halves are concatenated and fused by a 1x1
// conv_bn_act to out_channels.
struct Bottleneck {
    ConvBnAct reduce;  // 1x1, h -> h/2
    ConvBnAct expand;  // 3x3, h/2 -> h
};

struct CspBlock {
    std::vector<Bottleneck> units;
    ConvBnAct fuse;  // 1x1, in -> out
    int in_channels = 0;
    int out_channels = 0;

    static CspBlock make(int in_ch, int out_ch, int depth, Act act);
    long parameter_count() const;
};

Tensor csp_block(const Tensor& x, const CspBlock& blk);

// Spatial pyramid pooling: the input alongside stride-1 max-pooled copies
// (padding k/2, shape-preserving) for each kernel, concatenated to
// (1+#kernels)*C channels, then fused back to C by a 1x1 conv_bn_act.
struct SppBlock {
    std::vector<int> kernels;
    ConvBnAct fuse;
    int channels = 0;

    static SppBlock make(int channels, std::vector<int> kernels, Act act);
    long parameter_count() const;
};

Tensor spp_block(const Tensor& x, const SppBlock& blk);

}  // namespace dsnet
