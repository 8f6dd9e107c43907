#include "dsnet/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dsnet {

// ---- CBAM -----------------------------------------------------------------

CbamWeights CbamWeights::make(int channels, int reduction, int spatial_kernel) {
    if (channels <= 0 || reduction <= 0)
        throw std::invalid_argument("cbam: channels and reduction must be positive");
    if (channels % reduction != 0)
        throw std::invalid_argument("cbam: channels " + std::to_string(channels) +
                                    " not divisible by reduction " + std::to_string(reduction));
    if (spatial_kernel <= 0 || spatial_kernel % 2 == 0)
        throw std::invalid_argument("cbam: spatial kernel must be odd");
    CbamWeights w;
    w.reduction = reduction;
    w.w0 = Tensor({channels / reduction, channels});
    w.w1 = Tensor({channels, channels / reduction});
    w.conv7 = Tensor({1, 2, spatial_kernel, spatial_kernel});
    return w;
}

long CbamWeights::parameter_count() const {
    return static_cast<long>(w0.numel() + w1.numel() + conv7.numel());
}

namespace {

// shared two-layer MLP on a (1,C) row: w1 * relu(w0 * x)
Tensor gate_mlp(const Tensor& row, const Tensor& w0, const Tensor& w1) {
    const int perm[2] = {1, 0};
    Tensor h = matmul(row, transpose(w0, perm));
    h = activation(Act::ReLU, h);
    return matmul(h, transpose(w1, perm));
}

}  // namespace

Tensor channel_attention(const Tensor& f, const Tensor& w0, const Tensor& w1) {
    if (f.rank() != 3) throw std::invalid_argument("channel_attention: input must be (C,H,W)");
    const int C = f.dim(0);
    if (w0.rank() != 2 || w0.dim(1) != C || w1.rank() != 2 || w1.dim(0) != C ||
        w1.dim(1) != w0.dim(0))
        throw std::invalid_argument("channel_attention: mlp weights must be (C/r,C) and (C,C/r)");
    const Tensor avg = reshape(global_pool(f, Pool::Avg), {1, C});
    const Tensor mx = reshape(global_pool(f, Pool::Max), {1, C});
    const Tensor summed = add(gate_mlp(avg, w0, w1), gate_mlp(mx, w0, w1));
    return reshape(activation(Act::Sigmoid, summed), {C, 1, 1});
}

Tensor spatial_attention(const Tensor& f, const Tensor& conv7) {
    if (f.rank() != 3) throw std::invalid_argument("spatial_attention: input must be (C,H,W)");
    if (conv7.rank() != 4 || conv7.dim(0) != 1 || conv7.dim(1) != 2)
        throw std::invalid_argument("spatial_attention: conv weights must be (1,2,n,n)");
    const int C = f.dim(0), H = f.dim(1), W = f.dim(2);
    Tensor maps({2, H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sum = 0.0;
            float mx = f.at(0, y, x);
            for (int c = 0; c < C; ++c) {
                sum += static_cast<double>(f.at(c, y, x));
                mx = std::max(mx, f.at(c, y, x));
            }
            maps.at(0, y, x) = static_cast<float>(sum / C);
            maps.at(1, y, x) = mx;
        }
    }
    const Tensor conv = conv2d(maps, conv7, nullptr, 1, conv7.dim(2) / 2);
    return activation(Act::Sigmoid, conv);
}

Tensor cbam(const Tensor& f, const CbamWeights& w) {
    const Tensor cgate = channel_attention(f, w.w0, w.w1);
    const int C = f.dim(0), H = f.dim(1), W = f.dim(2);
    Tensor refined = f;
    for (int c = 0; c < C; ++c) {
        const double g = static_cast<double>(cgate[static_cast<std::size_t>(c)]);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                refined.at(c, y, x) = static_cast<float>(static_cast<double>(refined.at(c, y, x)) * g);
    }
    const Tensor sgate = spatial_attention(refined, w.conv7);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                refined.at(c, y, x) = static_cast<float>(static_cast<double>(refined.at(c, y, x)) *
                                                         static_cast<double>(sgate.at(0, y, x)));
    return refined;
}

// ---- window bookkeeping -----------------------------------------------------

std::pair<Tensor, WindowGrid> window_partition(const Tensor& f, int m) {
    if (f.rank() != 3) throw std::invalid_argument("window_partition: input must be (H,W,C)");
    if (m < 1) throw std::invalid_argument("window_partition: window size must be >= 1");
    WindowGrid grid;
    grid.h = f.dim(0);
    grid.w = f.dim(1);
    grid.c = f.dim(2);
    grid.m = m;
    grid.padded_h = (grid.h + m - 1) / m * m;
    grid.padded_w = (grid.w + m - 1) / m * m;

    const int wy_n = grid.padded_h / m, wx_n = grid.padded_w / m;
    Tensor windows({wy_n * wx_n, m * m, grid.c});
    for (int wy = 0; wy < wy_n; ++wy) {
        for (int wx = 0; wx < wx_n; ++wx) {
            const int wi = wy * wx_n + wx;
            for (int iy = 0; iy < m; ++iy) {
                for (int ix = 0; ix < m; ++ix) {
                    const int y = wy * m + iy, x = wx * m + ix;
                    if (y >= grid.h || x >= grid.w) continue;  // zero padding
                    const float* src = f.data() +
                        (static_cast<std::size_t>(y) * grid.w + x) * grid.c;
                    float* dst = windows.data() +
                        ((static_cast<std::size_t>(wi) * m * m) + iy * m + ix) * grid.c;
                    for (int c = 0; c < grid.c; ++c) dst[c] = src[c];
                }
            }
        }
    }
    return {std::move(windows), grid};
}

Tensor window_reverse(const Tensor& windows, const WindowGrid& grid) {
    const int m = grid.m;
    if (windows.rank() != 3 || windows.dim(0) != grid.count() || windows.dim(1) != m * m ||
        windows.dim(2) != grid.c)
        throw std::invalid_argument("window_reverse: windows do not match the grid");
    Tensor f({grid.h, grid.w, grid.c});
    const int wx_n = grid.padded_w / m;
    for (int wi = 0; wi < grid.count(); ++wi) {
        const int wy = wi / wx_n, wx = wi % wx_n;
        for (int iy = 0; iy < m; ++iy) {
            for (int ix = 0; ix < m; ++ix) {
                const int y = wy * m + iy, x = wx * m + ix;
                if (y >= grid.h || x >= grid.w) continue;  // cropped padding
                const float* src = windows.data() +
                    ((static_cast<std::size_t>(wi) * m * m) + iy * m + ix) * grid.c;
                float* dst = f.data() + (static_cast<std::size_t>(y) * grid.w + x) * grid.c;
                for (int c = 0; c < grid.c; ++c) dst[c] = src[c];
            }
        }
    }
    return f;
}

// ---- masked windowed attention -----------------------------------------------

MsaWeights MsaWeights::make(int channels, int heads) {
    if (channels <= 0 || heads <= 0)
        throw std::invalid_argument("msa: channels and heads must be positive");
    if (channels % heads != 0)
        throw std::invalid_argument("msa: channels " + std::to_string(channels) +
                                    " not divisible by heads " + std::to_string(heads));
    MsaWeights w;
    w.heads = heads;
    w.wq = Tensor({channels, channels});
    w.wk = Tensor({channels, channels});
    w.wv = Tensor({channels, channels});
    w.wo = Tensor({channels, channels});
    w.bq = Tensor({channels});
    w.bk = Tensor({channels});
    w.bv = Tensor({channels});
    w.bo = Tensor({channels});
    return w;
}

long MsaWeights::parameter_count() const {
    return static_cast<long>(wq.numel() + wk.numel() + wv.numel() + wo.numel() + bq.numel() +
                             bk.numel() + bv.numel() + bo.numel());
}

namespace {

// cyclic roll: out(i,j) = in((i+sy) mod H, (j+sx) mod W)
Tensor cyclic_shift(const Tensor& f, int sy, int sx) {
    const int H = f.dim(0), W = f.dim(1), C = f.dim(2);
    Tensor out({H, W, C});
    for (int i = 0; i < H; ++i) {
        const int yi = (i + sy) % H;
        for (int j = 0; j < W; ++j) {
            const int xj = (j + sx) % W;
            const float* src = f.data() + (static_cast<std::size_t>(yi) * W + xj) * C;
            float* dst = out.data() + (static_cast<std::size_t>(i) * W + j) * C;
            for (int c = 0; c < C; ++c) dst[c] = src[c];
        }
    }
    return out;
}

// region band on post-shift coordinates: the window-aligned body, the band
// that shares windows with wrapped rows, and the wrapped rows themselves
int band(int t, int padded, int m, int shift) {
    if (shift == 0) return 0;
    if (t < padded - m) return 0;
    if (t < padded - shift) return 1;
    return 2;
}

struct TokenInfo {
    bool valid;  // maps back to a real (non-padding) input position
    int region;
};

std::vector<TokenInfo> token_provenance(int h, int w, int m, int shift, int padded_h,
                                        int padded_w) {
    std::vector<TokenInfo> info(static_cast<std::size_t>(padded_h) * padded_w);
    for (int i = 0; i < padded_h; ++i) {
        for (int j = 0; j < padded_w; ++j) {
            const int oy = (i + shift) % padded_h;  // pre-shift position
            const int ox = (j + shift) % padded_w;
            info[static_cast<std::size_t>(i) * padded_w + j] = {
                oy < h && ox < w, band(i, padded_h, m, shift) * 3 + band(j, padded_w, m, shift)};
        }
    }
    return info;
}

void add_rowvec(Tensor& x, const Tensor& b) {
    const int rows = x.dim(0), cols = x.dim(1);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            x[static_cast<std::size_t>(r) * cols + c] = static_cast<float>(
                static_cast<double>(x[static_cast<std::size_t>(r) * cols + c]) +
                static_cast<double>(b[static_cast<std::size_t>(c)]));
}

// core: padded-and-shifted map in, padded-and-shifted map out
Tensor attend_windows(const Tensor& shifted, const std::vector<TokenInfo>& info,
                      const MsaWeights& w, int m, bool scale_qk, AttentionTrace* trace) {
    auto [windows, grid] = window_partition(shifted, m);
    const int C = grid.c, T = m * m, heads = w.heads, d = C / heads;
    const double scale = scale_qk ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    const int wx_n = grid.padded_w / m;

    Tensor out_windows({grid.count(), T, C});
    const int perm2[2] = {1, 0};
    for (int wi = 0; wi < grid.count(); ++wi) {
        const int wy = wi / wx_n, wx = wi % wx_n;
        // provenance for this window's tokens
        std::vector<TokenInfo> tok(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            const int y = wy * m + t / m, x = wx * m + t % m;
            tok[static_cast<std::size_t>(t)] = info[static_cast<std::size_t>(y) * grid.padded_w + x];
        }

        Tensor x_tok = reshape(slice(windows, 0, wi, 1), {T, C});
        Tensor q = matmul(x_tok, w.wq);
        add_rowvec(q, w.bq);
        Tensor k = matmul(x_tok, w.wk);
        add_rowvec(k, w.bk);
        Tensor v = matmul(x_tok, w.wv);
        add_rowvec(v, w.bv);

        Tensor trace_attn = trace ? Tensor({heads, T, T}) : Tensor();
        Tensor z({T, C});
        for (int hd = 0; hd < heads; ++hd) {
            const Tensor qh = slice(q, 1, hd * d, d);
            const Tensor kh = slice(k, 1, hd * d, d);
            const Tensor vh = slice(v, 1, hd * d, d);
            Tensor scores = matmul(qh, transpose(kh, perm2));

            // masked softmax: padded keys and cross-region keys carry exactly
            // zero weight; rows with no admissible key (padded queries) zero out
            Tensor attn({T, T});
            for (int i = 0; i < T; ++i) {
                double mx = 0.0;
                bool any = false;
                for (int j = 0; j < T; ++j) {
                    if (!tok[static_cast<std::size_t>(i)].valid ||
                        !tok[static_cast<std::size_t>(j)].valid ||
                        tok[static_cast<std::size_t>(i)].region !=
                            tok[static_cast<std::size_t>(j)].region)
                        continue;
                    const double s =
                        static_cast<double>(scores[static_cast<std::size_t>(i) * T + j]) * scale;
                    mx = any ? std::max(mx, s) : s;
                    any = true;
                }
                if (!any) continue;  // row stays zero
                double sum = 0.0;
                std::vector<double> e(static_cast<std::size_t>(T), 0.0);
                for (int j = 0; j < T; ++j) {
                    if (!tok[static_cast<std::size_t>(j)].valid ||
                        tok[static_cast<std::size_t>(i)].region !=
                            tok[static_cast<std::size_t>(j)].region)
                        continue;
                    const double s =
                        static_cast<double>(scores[static_cast<std::size_t>(i) * T + j]) * scale;
                    e[static_cast<std::size_t>(j)] = std::exp(s - mx);
                    sum += e[static_cast<std::size_t>(j)];
                }
                for (int j = 0; j < T; ++j)
                    attn[static_cast<std::size_t>(i) * T + j] =
                        static_cast<float>(e[static_cast<std::size_t>(j)] / sum);
            }
            if (trace)
                for (int i = 0; i < T * T; ++i)
                    trace_attn[static_cast<std::size_t>(hd) * T * T + i] =
                        attn[static_cast<std::size_t>(i)];

            const Tensor zh = matmul(attn, vh);
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < d; ++c)
                    z[static_cast<std::size_t>(t) * C + hd * d + c] =
                        zh[static_cast<std::size_t>(t) * d + c];
        }
        if (trace) trace->windows.push_back(std::move(trace_attn));

        Tensor y = matmul(z, w.wo);
        add_rowvec(y, w.bo);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                out_windows[(static_cast<std::size_t>(wi) * T + t) * C + c] =
                    y[static_cast<std::size_t>(t) * C + c];
    }

    // reverse over the padded grid (grid was built from the padded map, so
    // h/w already equal padded_h/padded_w here)
    return window_reverse(out_windows, grid);
}

Tensor pad_map(const Tensor& f, int padded_h, int padded_w) {
    const int H = f.dim(0), W = f.dim(1), C = f.dim(2);
    if (H == padded_h && W == padded_w) return f;
    Tensor out({padded_h, padded_w, C});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                out[(static_cast<std::size_t>(y) * padded_w + x) * C + c] =
                    f[(static_cast<std::size_t>(y) * W + x) * C + c];
    return out;
}

Tensor windowed_attention(const Tensor& f, const MsaWeights& w, int m, int shift, bool scale_qk,
                          AttentionTrace* trace) {
    if (f.rank() != 3) throw std::invalid_argument("w_msa: input must be (H,W,C)");
    if (m < 1) throw std::invalid_argument("w_msa: window size must be >= 1");
    if (shift < 0 || shift >= m)
        throw std::invalid_argument("w_msa: shift must lie in [0, window size)");
    const int H = f.dim(0), W = f.dim(1), C = f.dim(2);
    if (C != w.wq.dim(0)) throw std::invalid_argument("w_msa: channel/weight mismatch");
    if (C % w.heads != 0) throw std::invalid_argument("w_msa: channels not divisible by heads");

    const int Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
    Tensor padded = pad_map(f, Hp, Wp);
    if (shift > 0) padded = cyclic_shift(padded, shift, shift);

    const std::vector<TokenInfo> info = token_provenance(H, W, m, shift, Hp, Wp);
    Tensor out = attend_windows(padded, info, w, m, scale_qk, trace);

    if (shift > 0) out = cyclic_shift(out, (Hp - shift) % Hp, (Wp - shift) % Wp);
    // crop padding
    Tensor result({H, W, C});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                result[(static_cast<std::size_t>(y) * W + x) * C + c] =
                    out[(static_cast<std::size_t>(y) * Wp + x) * C + c];
    return result;
}

}  // namespace

Tensor w_msa(const Tensor& f, const MsaWeights& w, int m, bool scale_qk, AttentionTrace* trace) {
    return windowed_attention(f, w, m, 0, scale_qk, trace);
}

Tensor sw_msa(const Tensor& f, const MsaWeights& w, int m, int shift, bool scale_qk,
              AttentionTrace* trace) {
    return windowed_attention(f, w, m, shift, scale_qk, trace);
}

std::vector<std::vector<std::vector<bool>>> attention_mask(int h, int w, int m, int shift) {
    if (h < 1 || w < 1 || m < 1 || shift < 0 || shift >= m)
        throw std::invalid_argument("attention_mask: bad geometry");
    const int Hp = (h + m - 1) / m * m, Wp = (w + m - 1) / m * m;
    const std::vector<TokenInfo> info = token_provenance(h, w, m, shift, Hp, Wp);
    const int wx_n = Wp / m, count = (Hp / m) * wx_n, T = m * m;
    std::vector<std::vector<std::vector<bool>>> mask(
        static_cast<std::size_t>(count),
        std::vector<std::vector<bool>>(static_cast<std::size_t>(T),
                                       std::vector<bool>(static_cast<std::size_t>(T), false)));
    for (int wi = 0; wi < count; ++wi) {
        const int wy = wi / wx_n, wx = wi % wx_n;
        for (int i = 0; i < T; ++i) {
            const TokenInfo& qi =
                info[static_cast<std::size_t>(wy * m + i / m) * Wp + wx * m + i % m];
            for (int j = 0; j < T; ++j) {
                const TokenInfo& kj =
                    info[static_cast<std::size_t>(wy * m + j / m) * Wp + wx * m + j % m];
                mask[static_cast<std::size_t>(wi)][static_cast<std::size_t>(i)]
                    [static_cast<std::size_t>(j)] =
                        qi.valid && kj.valid && qi.region == kj.region;
            }
        }
    }
    return mask;
}

// ---- transformer encoder pair -------------------------------------------------

MlpWeights MlpWeights::make(int channels, int ratio) {
    if (channels <= 0 || ratio < 1) throw std::invalid_argument("mlp: bad channels or ratio");
    MlpWeights w;
    w.fc1 = Tensor({channels, channels * ratio});
    w.b1 = Tensor({channels * ratio});
    w.fc2 = Tensor({channels * ratio, channels});
    w.b2 = Tensor({channels});
    return w;
}

long MlpWeights::parameter_count() const {
    return static_cast<long>(fc1.numel() + b1.numel() + fc2.numel() + b2.numel());
}

StrBlockWeights StrBlockWeights::make(int channels, int window, int heads, int mlp_ratio) {
    if (window < 1) throw std::invalid_argument("str_block: window size must be >= 1");
    StrBlockWeights w;
    w.window = window;
    for (Tensor* g : {&w.ln1_g, &w.ln2_g, &w.ln3_g, &w.ln4_g}) *g = Tensor({channels});
    for (Tensor* b : {&w.ln1_b, &w.ln2_b, &w.ln3_b, &w.ln4_b}) *b = Tensor({channels});
    w.msa1 = MsaWeights::make(channels, heads);
    w.msa2 = MsaWeights::make(channels, heads);
    w.mlp1 = MlpWeights::make(channels, mlp_ratio);
    w.mlp2 = MlpWeights::make(channels, mlp_ratio);
    return w;
}

long StrBlockWeights::parameter_count() const {
    return 8L * ln1_g.dim(0) + msa1.parameter_count() + msa2.parameter_count() +
           mlp1.parameter_count() + mlp2.parameter_count();
}

namespace {

Tensor mlp_forward(const Tensor& f, const MlpWeights& w) {
    const int H = f.dim(0), W = f.dim(1), C = f.dim(2);
    Tensor x = reshape(f, {H * W, C});
    Tensor h = matmul(x, w.fc1);
    add_rowvec(h, w.b1);
    h = activation(Act::GeLU, h);
    Tensor y = matmul(h, w.fc2);
    add_rowvec(y, w.b2);
    return reshape(y, {H, W, C});
}

}  // namespace

Tensor str_block_pair(const Tensor& f, const StrBlockWeights& w, bool scale_qk) {
    if (f.rank() != 3) throw std::invalid_argument("str_block_pair: input must be (H,W,C)");
    const int m = w.window;
    Tensor z = add(f, w_msa(layer_norm(f, w.ln1_g, w.ln1_b, kLnEps), w.msa1, m, scale_qk));
    z = add(z, mlp_forward(layer_norm(z, w.ln2_g, w.ln2_b, kLnEps), w.mlp1));
    z = add(z, sw_msa(layer_norm(z, w.ln3_g, w.ln3_b, kLnEps), w.msa2, m, m / 2, scale_qk));
    z = add(z, mlp_forward(layer_norm(z, w.ln4_g, w.ln4_b, kLnEps), w.mlp2));
    return z;
}

// ---- attention cost model -------------------------------------------------------

ComplexityCount complexity(int h, int w, int c, int m) {
    if (h <= 0 || w <= 0 || c <= 0 || m <= 0)
        throw std::invalid_argument("complexity: all arguments must be positive");
    using u128 = unsigned __int128;
    const u128 hw = static_cast<u128>(h) * static_cast<u128>(w);
    const u128 c2 = static_cast<u128>(c) * static_cast<u128>(c);
    const u128 shared = 4 * hw * c2;
    const u128 msa = shared + 2 * hw * hw * static_cast<u128>(c);
    const u128 wmsa = shared + 2 * hw * static_cast<u128>(m) * static_cast<u128>(m) *
                                   static_cast<u128>(c);
    constexpr u128 limit = static_cast<u128>(UINT64_MAX);
    if (msa > limit || wmsa > limit)
        throw std::overflow_error("complexity: count exceeds 64-bit range");
    return {static_cast<std::uint64_t>(msa), static_cast<std::uint64_t>(wmsa)};
}

}  // namespace dsnet
