#include "dsnet/blocks.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dsnet {

ConvBnAct ConvBnAct::make(int in_ch, int out_ch, int k, int stride, Act act) {
    if (in_ch <= 0 || out_ch <= 0) throw std::invalid_argument("conv_bn_act: channels must be positive");
    if (k <= 0 || k % 2 == 0) throw std::invalid_argument("conv_bn_act: kernel must be odd and positive");
    if (stride <= 0) throw std::invalid_argument("conv_bn_act: stride must be positive");
    ConvBnAct c;
    c.w = Tensor({out_ch, in_ch, k, k});
    c.bn_mean = Tensor({out_ch});
    c.bn_var = Tensor::full({out_ch}, 1.0f);
    c.bn_gamma = Tensor::full({out_ch}, 1.0f);
    c.bn_beta = Tensor({out_ch});
    c.stride = stride;
    c.padding = k / 2;
    c.act = act;
    return c;
}

long ConvBnAct::parameter_count() const {
    return static_cast<long>(w.numel() + bn_mean.numel() + bn_var.numel() + bn_gamma.numel() +
                             bn_beta.numel());
}

Tensor conv_bn_act(const Tensor& x, const ConvBnAct& cfg) {
    Tensor y = conv2d(x, cfg.w, nullptr, cfg.stride, cfg.padding);
    y = batch_norm_inference(y, cfg.bn_mean, cfg.bn_var, cfg.bn_gamma, cfg.bn_beta, kBnEps);
    return activation(cfg.act, y);
}

DenseBlock DenseBlock::make(int in_ch, int n, int growth, Act act) {
    if (n < 1) throw std::invalid_argument("dense_block: need at least one layer");
    if (growth <= 0) throw std::invalid_argument("dense_block: growth must be positive");
    DenseBlock blk;
    blk.in_channels = in_ch;
    blk.growth = growth;
    for (int i = 0; i < n; ++i)
        blk.layers.push_back(ConvBnAct::make(in_ch + i * growth, growth, 3, 1, act));
    return blk;
}

long DenseBlock::parameter_count() const {
    long n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
}

Tensor dense_block(const Tensor& x, const DenseBlock& blk) {
    if (x.rank() != 3 || x.dim(0) != blk.in_channels)
        throw std::invalid_argument("dense_block: expected " + std::to_string(blk.in_channels) +
                                    " input channels, got " + x.shape_str());
    Tensor feats = x;
    for (const auto& layer : blk.layers) {
        Tensor y = conv_bn_act(feats, layer);
        feats = concat(feats, y, 0);
    }
    return feats;
}

CspBlock CspBlock::make(int in_ch, int out_ch, int depth, Act act) {
    if (in_ch <= 0 || in_ch % 2 != 0)
        throw std::invalid_argument("csp_block: input channels must be even, got " +
                                    std::to_string(in_ch));
    const int half = in_ch / 2;
    if (half % 2 != 0)
        throw std::invalid_argument("csp_block: half width must be even for the bottleneck reduce");
    if (depth < 1) throw std::invalid_argument("csp_block: depth must be at least 1");
    CspBlock blk;
    blk.in_channels = in_ch;
    blk.out_channels = out_ch;
    for (int i = 0; i < depth; ++i) {
        Bottleneck u;
        u.reduce = ConvBnAct::make(half, half / 2, 1, 1, act);
        u.expand = ConvBnAct::make(half / 2, half, 3, 1, act);
        blk.units.push_back(std::move(u));
    }
    blk.fuse = ConvBnAct::make(in_ch, out_ch, 1, 1, act);
    return blk;
}

long CspBlock::parameter_count() const {
    long n = fuse.parameter_count();
    for (const auto& u : units) n += u.reduce.parameter_count() + u.expand.parameter_count();
    return n;
}

Tensor csp_block(const Tensor& x, const CspBlock& blk) {
    if (x.rank() != 3 || x.dim(0) != blk.in_channels)
        throw std::invalid_argument("csp_block: expected " + std::to_string(blk.in_channels) +
                                    " input channels, got " + x.shape_str());
    const int half = blk.in_channels / 2;
    Tensor processed = slice(x, 0, 0, half);
    const Tensor bypass = slice(x, 0, half, half);
    for (const auto& u : blk.units) {
        Tensor y = conv_bn_act(processed, u.reduce);
        y = conv_bn_act(y, u.expand);
        processed = add(processed, y);
    }
    return conv_bn_act(concat(processed, bypass, 0), blk.fuse);
}

SppBlock SppBlock::make(int channels, std::vector<int> kernels, Act act) {
    if (channels <= 0) throw std::invalid_argument("spp_block: channels must be positive");
    if (kernels.empty()) throw std::invalid_argument("spp_block: kernel list must be non-empty");
    for (int k : kernels)
        if (k <= 1 || k % 2 == 0)
            throw std::invalid_argument("spp_block: kernels must be odd and > 1");
    SppBlock blk;
    blk.channels = channels;
    blk.kernels = std::move(kernels);
    blk.fuse = ConvBnAct::make(channels * (1 + static_cast<int>(blk.kernels.size())), channels, 1, 1, act);
    return blk;
}

long SppBlock::parameter_count() const { return fuse.parameter_count(); }

Tensor spp_block(const Tensor& x, const SppBlock& blk) {
    if (x.rank() != 3 || x.dim(0) != blk.channels)
        throw std::invalid_argument("spp_block: expected " + std::to_string(blk.channels) +
                                    " input channels, got " + x.shape_str());
    int max_k = 0;
    for (int k : blk.kernels) max_k = std::max(max_k, k);
    if (2 * x.dim(1) < max_k || 2 * x.dim(2) < max_k)
        throw std::invalid_argument("spp_block: spatial dims " + std::to_string(x.dim(1)) + "x" +
                                    std::to_string(x.dim(2)) + " too small for kernel " +
                                    std::to_string(max_k));
    std::vector<Tensor> pooled;
    pooled.reserve(blk.kernels.size());
    std::vector<const Tensor*> parts{&x};
    for (int k : blk.kernels) {
        pooled.push_back(pool2d(x, Pool::Max, k, 1, k / 2));
        parts.push_back(&pooled.back());
    }
    return conv_bn_act(concat(std::span<const Tensor* const>(parts), 0), blk.fuse);
}

}  // namespace dsnet
