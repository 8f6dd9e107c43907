#pragma once

#include <cstdint>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

// ---- CBAM -----------------------------------------------------------------

// Channel and spatial gates applied in sequence. Weights default to zero,
// which makes both gates sigmoid(0) = 0.5.
struct CbamWeights {
    Tensor w0;     // (C/r, C) shared MLP first layer
    Tensor w1;     // (C, C/r) shared MLP second layer
    Tensor conv7;  // (1, 2, n, n) spatial conv over [avg;max] maps
    int reduction = 16;

    static CbamWeights make(int channels, int reduction, int spatial_kernel = 7);
    long parameter_count() const;
};

// sigmoid(MLP(avg-pooled) + MLP(max-pooled)) with the shared two-layer MLP
// C -> C/r -> C (rectifier between); gate shape (C,1,1), values in (0,1).
Tensor channel_attention(const Tensor& f, const Tensor& w0, const Tensor& w1);

// Channel-wise mean and max stacked to (2,H,W), conv (pad n/2), sigmoid;
// gate shape (1,H,W).
Tensor spatial_attention(const Tensor& f, const Tensor& conv7);

// f' = channel gate * f (broadcast over H,W); f'' = spatial gate * f'
// (broadcast over C). Since both gates lie in (0,1), |f''| <= |f| holds
// elementwise.
Tensor cbam(const Tensor& f, const CbamWeights& w);

// ---- windowed self-attention ------------------------------------------------

// Bookkeeping for splitting an H x W x C map into non-overlapping m x m
// windows. Non-multiple sizes are zero-padded up to (padded_h, padded_w) and
// cropped again on reverse.
struct WindowGrid {
    int h = 0, w = 0, c = 0;
    int m = 1;
    int padded_h = 0, padded_w = 0;

    int count() const { return (padded_h / m) * (padded_w / m); }
};

// (H,W,C) -> (nW, m*m, C); windows ordered row-major, tokens within a window
// row-major as well.
std::pair<Tensor, WindowGrid> window_partition(const Tensor& f, int m);
Tensor window_reverse(const Tensor& windows, const WindowGrid& grid);

struct MsaWeights {
    Tensor wq, wk, wv, wo;  // (C, C)
    Tensor bq, bk, bv, bo;  // (C)
    int heads = 1;

    static MsaWeights make(int channels, int heads);
    long parameter_count() const;
};

// Per-window attention rows, for audits: one (heads, m*m, m*m) tensor per
// window in partition order. Masked entries are exactly 0; rows whose query
// token is real sum to 1.
struct AttentionTrace {
    std::vector<Tensor> windows;
};

// Windowed multi-head self-attention on an (H,W,C) map: partition into m x m
// windows, per head softmax(Q.K^T * s) V with s = 1/sqrt(C/heads) when
// scale_qk is set (s = 1 otherwise, kept for audits against the unscaled
// formula), heads concatenated and projected by wo. Zero-padded tokens are
// masked out of every softmax row.
Tensor w_msa(const Tensor& f, const MsaWeights& w, int m, bool scale_qk = true,
             AttentionTrace* trace = nullptr);

// Shifted variant: cyclically shift the map by (-shift,-shift), run w_msa
// with a mask that keeps tokens from different pre-shift window regions from
// attending to each other, shift back. shift = 0 degenerates to w_msa
// exactly.
Tensor sw_msa(const Tensor& f, const MsaWeights& w, int m, int shift, bool scale_qk = true,
              AttentionTrace* trace = nullptr);

// The provenance mask sw_msa uses, exposed so audits can rebuild expectations
// independently: entry (window, i, j) is true when token j may serve as a key
// for token i (same pre-shift region and not padding). Rows for padded query
// tokens are all false.
std::vector<std::vector<std::vector<bool>>> attention_mask(int h, int w, int m, int shift);

// ---- transformer encoder pair ----------------------------------------------

struct MlpWeights {
    Tensor fc1, b1;  // (C, ratio*C), (ratio*C)
    Tensor fc2, b2;  // (ratio*C, C), (C)

    static MlpWeights make(int channels, int ratio);
    long parameter_count() const;
};

// Two consecutive encoder blocks on an (H,W,C) map:
//   z1 = f  + W-MSA(LN(f));   z2 = z1 + MLP(LN(z1))
//   z3 = z2 + SW-MSA(LN(z2)); z4 = z3 + MLP(LN(z3))
// MLP = fc1 -> GeLU -> fc2; SW-MSA uses shift floor(m/2). With all-zero
// weights every branch contributes zero, so the pair is the identity map.
struct StrBlockWeights {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b, ln4_g, ln4_b;
    MsaWeights msa1, msa2;
    MlpWeights mlp1, mlp2;
    int window = 4;

    static StrBlockWeights make(int channels, int window, int heads, int mlp_ratio);
    long parameter_count() const;
};

constexpr double kLnEps = 1e-5;

Tensor str_block_pair(const Tensor& f, const StrBlockWeights& w, bool scale_qk = true);

// ---- attention cost model ----------------------------------------------------

// Exact operation counts for global vs windowed multi-head self-attention
// over an H x W map of C-dimensional tokens with window size m:
//   msa   = 4*H*W*C^2 + 2*(H*W)^2*C
//   w_msa = 4*H*W*C^2 + 2*H*W*m^2*C
// Computed in 128-bit intermediates; throws on uint64 overflow.
struct ComplexityCount {
    std::uint64_t msa = 0;
    std::uint64_t w_msa = 0;
};

ComplexityCount complexity(int h, int w, int c, int m);

}  // namespace dsnet
