#include "dsnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dsnet/rng.hpp"

namespace dsnet {

namespace {

std::size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_numel(shape_) != data_.size())
        throw std::invalid_argument("tensor: value count does not match shape");
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::random_uniform(std::vector<int> shape, float lo, float hi,
                              std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<float>(uniform(rng, lo, hi));
    return t;
}

int Tensor::dim(int axis) const {
    if (axis < 0 || axis >= rank()) throw std::invalid_argument("tensor: axis out of range");
    return shape_[static_cast<std::size_t>(axis)];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    return os.str();
}

float& Tensor::at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
}

float Tensor::at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
}

double activate(Act kind, double x) {
    switch (kind) {
        case Act::Sigmoid: {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        }
        case Act::SiLU:
            return x * activate(Act::Sigmoid, x);
        case Act::LeakyReLU:
            return x < 0.0 ? 0.1 * x : x;
        case Act::Mish: {
            // x * tanh(softplus(x)); softplus saturates to x for large x
            const double sp = x > 20.0 ? x : std::log1p(std::exp(x));
            return x * std::tanh(sp);
        }
        case Act::GeLU:
            return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        case Act::ReLU:
            return x < 0.0 ? 0.0 : x;
        case Act::Identity:
            return x;
    }
    throw std::invalid_argument("activate: unknown kind");
}

Tensor activation(Act kind, const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i)
        y[i] = static_cast<float>(activate(kind, static_cast<double>(x[i])));
    return y;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              int stride, int padding) {
    if (input.rank() != 3) throw std::invalid_argument("conv2d: input must be (C,H,W)");
    if (weight.rank() != 4) throw std::invalid_argument("conv2d: weight must be (O,C,k,k)");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != C)
        throw std::invalid_argument("conv2d: weight channels " + std::to_string(weight.dim(1)) +
                                    " do not match input channels " + std::to_string(C));
    if (weight.dim(3) != k) throw std::invalid_argument("conv2d: kernel must be square");
    if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    if (bias && (bias->rank() != 1 || bias->dim(0) != O))
        throw std::invalid_argument("conv2d: bias must be (O)");
    const int Hp = H + 2 * padding, Wp = W + 2 * padding;
    if (k > Hp || k > Wp) throw std::invalid_argument("conv2d: kernel larger than padded input");
    const int Ho = (Hp - k) / stride + 1;
    const int Wo = (Wp - k) / stride + 1;

    // im2col: one row per output pixel, columns in (c, ky, kx) order, so the
    // per-element dot below realizes the documented accumulation order.
    const std::size_t cols = static_cast<std::size_t>(C) * k * k;
    const std::size_t rows = static_cast<std::size_t>(Ho) * Wo;
    std::vector<float> col(rows * cols, 0.0f);
    const float* in = input.data();
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            float* dst = col.data() + (static_cast<std::size_t>(oy) * Wo + ox) * cols;
            const int y0 = oy * stride - padding;
            const int x0 = ox * stride - padding;
            for (int c = 0; c < C; ++c) {
                const float* plane = in + static_cast<std::size_t>(c) * H * W;
                for (int ky = 0; ky < k; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= H) {
                        dst += k;
                        continue;
                    }
                    const float* row = plane + static_cast<std::size_t>(y) * W;
                    for (int kx = 0; kx < k; ++kx) {
                        const int x = x0 + kx;
                        *dst++ = (x < 0 || x >= W) ? 0.0f : row[x];
                    }
                }
            }
        }
    }

    Tensor out({O, Ho, Wo});
    float* po = out.data();
    const float* wr = weight.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* crow = col.data() + r * cols;
        for (int o = 0; o < O; ++o) {
            const float* worow = wr + static_cast<std::size_t>(o) * cols;
            double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
            for (std::size_t j = 0; j < cols; ++j)
                acc += static_cast<double>(crow[j]) * static_cast<double>(worow[j]);
            po[static_cast<std::size_t>(o) * rows + r] = static_cast<float>(acc);
        }
    }
    return out;
}

Tensor pool2d(const Tensor& input, Pool kind, int k, int stride, int padding) {
    if (input.rank() != 3) throw std::invalid_argument("pool2d: input must be (C,H,W)");
    if (k <= 0 || stride <= 0) throw std::invalid_argument("pool2d: kernel and stride must be positive");
    if (padding < 0 || padding >= k)
        throw std::invalid_argument("pool2d: padding must satisfy 0 <= padding < k");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int Hp = H + 2 * padding, Wp = W + 2 * padding;
    if (k > Hp || k > Wp) throw std::invalid_argument("pool2d: kernel larger than padded input");
    const int Ho = (Hp - k) / stride + 1;
    const int Wo = (Wp - k) / stride + 1;

    Tensor out({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const int y0 = oy * stride - padding;
                const int x0 = ox * stride - padding;
                if (kind == Pool::Max) {
                    float m = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < k; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= H) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= W) continue;
                            m = std::max(m, input.at(c, y, x));
                        }
                    }
                    out.at(c, oy, ox) = m;
                } else {
                    double acc = 0.0;
                    int count = 0;
                    for (int ky = 0; ky < k; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= H) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= W) continue;
                            acc += static_cast<double>(input.at(c, y, x));
                            ++count;
                        }
                    }
                    out.at(c, oy, ox) = static_cast<float>(acc / count);
                }
            }
        }
    }
    return out;
}

Tensor global_pool(const Tensor& input, Pool kind) {
    if (input.rank() != 3) throw std::invalid_argument("global_pool: input must be (C,H,W)");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    Tensor out({C, 1, 1});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const float* p = input.data() + static_cast<std::size_t>(c) * plane;
        if (kind == Pool::Max) {
            float m = p[0];
            for (std::size_t i = 1; i < plane; ++i) m = std::max(m, p[i]);
            out[static_cast<std::size_t>(c)] = m;
        } else {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
            out[static_cast<std::size_t>(c)] = static_cast<float>(acc / static_cast<double>(plane));
        }
    }
    return out;
}

Tensor batch_norm_inference(const Tensor& x, const Tensor& mean, const Tensor& var,
                            const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 3) throw std::invalid_argument("batch_norm: input must be (C,H,W)");
    const int C = x.dim(0);
    for (const Tensor* p : {&mean, &var, &gamma, &beta})
        if (p->rank() != 1 || p->dim(0) != C)
            throw std::invalid_argument("batch_norm: parameter shape must be (C)");
    if (eps < 0.0) throw std::invalid_argument("batch_norm: eps must be non-negative");
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Tensor y = x;
    for (int c = 0; c < C; ++c) {
        const double v = static_cast<double>(var[static_cast<std::size_t>(c)]);
        if (v < 0.0) throw std::invalid_argument("batch_norm: negative variance");
        const double denom = std::sqrt(v + eps);
        if (denom == 0.0) throw std::invalid_argument("batch_norm: zero variance with zero eps");
        const double m = static_cast<double>(mean[static_cast<std::size_t>(c)]);
        const double g = static_cast<double>(gamma[static_cast<std::size_t>(c)]);
        const double b = static_cast<double>(beta[static_cast<std::size_t>(c)]);
        float* row = y.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            row[i] = static_cast<float>((static_cast<double>(row[i]) - m) / denom * g + b);
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int C = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw std::invalid_argument("layer_norm: gamma/beta must match the last axis");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / static_cast<std::size_t>(C);
    Tensor y = x;
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = y.data() + r * static_cast<std::size_t>(C);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += static_cast<double>(row[c]);
        const double mean = sum / C;
        double sq = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = static_cast<double>(row[c]) - mean;
            sq += d * d;
        }
        const double inv = 1.0 / std::sqrt(sq / C + eps);
        for (int c = 0; c < C; ++c)
            row[c] = static_cast<float>((static_cast<double>(row[c]) - mean) * inv *
                                            static_cast<double>(gamma[static_cast<std::size_t>(c)]) +
                                        static_cast<double>(beta[static_cast<std::size_t>(c)]));
    }
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 operands required");
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    if (b.dim(0) != K)
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(K) + " vs " +
                                    std::to_string(b.dim(0)));
    // transpose b once so each dot runs over contiguous memory
    std::vector<float> bt(static_cast<std::size_t>(N) * K);
    for (int kk = 0; kk < K; ++kk)
        for (int n = 0; n < N; ++n)
            bt[static_cast<std::size_t>(n) * K + kk] = b[static_cast<std::size_t>(kk) * N + n];
    Tensor out({M, N});
    for (int m = 0; m < M; ++m) {
        const float* arow = a.data() + static_cast<std::size_t>(m) * K;
        for (int n = 0; n < N; ++n) {
            const float* brow = bt.data() + static_cast<std::size_t>(n) * K;
            double acc = 0.0;
            for (int kk = 0; kk < K; ++kk)
                acc += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
            out[static_cast<std::size_t>(m) * N + n] = static_cast<float>(acc);
        }
    }
    return out;
}

Tensor softmax_lastaxis(const Tensor& x) {
    const int C = x.dim(x.rank() - 1);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(C);
    Tensor y = x;
    std::vector<double> e(static_cast<std::size_t>(C));
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = y.data() + r * static_cast<std::size_t>(C);
        double m = static_cast<double>(row[0]);
        for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(row[c]));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            e[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(row[c]) - m);
            sum += e[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < C; ++c)
            row[c] = static_cast<float>(e[static_cast<std::size_t>(c)] / sum);
    }
    return y;
}

Tensor concat(std::span<const Tensor* const> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    const Tensor& first = *parts[0];
    if (axis < 0 || axis >= first.rank()) throw std::invalid_argument("concat: axis out of range");
    std::vector<int> shape = first.shape();
    int total = 0;
    for (const Tensor* p : parts) {
        if (p->rank() != first.rank()) throw std::invalid_argument("concat: rank mismatch");
        for (int a = 0; a < first.rank(); ++a)
            if (a != axis && p->dim(a) != first.dim(a))
                throw std::invalid_argument("concat: shape mismatch off the concat axis");
        total += p->dim(axis);
    }
    shape[static_cast<std::size_t>(axis)] = total;
    Tensor out(shape);

    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(first.dim(a));
    for (int a = axis + 1; a < first.rank(); ++a) inner *= static_cast<std::size_t>(first.dim(a));

    std::size_t dst_axis_off = 0;
    for (const Tensor* p : parts) {
        const std::size_t chunk = static_cast<std::size_t>(p->dim(axis)) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * static_cast<std::size_t>(total) + dst_axis_off) * inner,
                        p->data() + o * chunk, chunk * sizeof(float));
        dst_axis_off += static_cast<std::size_t>(p->dim(axis));
    }
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    const Tensor* parts[] = {&a, &b};
    return concat(std::span<const Tensor* const>(parts, 2), axis);
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.dim(axis))
        throw std::invalid_argument("slice: range out of bounds");
    std::vector<int> shape = x.shape();
    shape[static_cast<std::size_t>(axis)] = len;
    Tensor out(shape);
    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(x.dim(a));
    for (int a = axis + 1; a < x.rank(); ++a) inner *= static_cast<std::size_t>(x.dim(a));
    const std::size_t src_axis = static_cast<std::size_t>(x.dim(axis));
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * static_cast<std::size_t>(len) * inner,
                    x.data() + (o * src_axis + static_cast<std::size_t>(start)) * inner,
                    static_cast<std::size_t>(len) * inner * sizeof(float));
    return out;
}

Tensor transpose(const Tensor& x, std::span<const int> perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("transpose: bad permutation size");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw std::invalid_argument("transpose: invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }
    std::vector<int> shape(static_cast<std::size_t>(r));
    for (int a = 0; a < r; ++a) shape[static_cast<std::size_t>(a)] = x.dim(perm[static_cast<std::size_t>(a)]);
    Tensor out(shape);

    std::vector<std::size_t> src_strides(static_cast<std::size_t>(r), 1);
    for (int a = r - 2; a >= 0; --a)
        src_strides[static_cast<std::size_t>(a)] =
            src_strides[static_cast<std::size_t>(a + 1)] * static_cast<std::size_t>(x.dim(a + 1));

    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t src = 0;
        for (int a = 0; a < r; ++a)
            src += static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]) *
                   src_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])];
        out[i] = x[src];
        for (int a = r - 1; a >= 0; --a) {
            if (++idx[static_cast<std::size_t>(a)] < shape[static_cast<std::size_t>(a)]) break;
            idx[static_cast<std::size_t>(a)] = 0;
        }
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    Tensor out(std::move(new_shape));
    if (out.numel() != x.numel()) throw std::invalid_argument("reshape: element count mismatch");
    std::memcpy(out.data(), x.data(), x.numel() * sizeof(float));
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("upsample: input must be (C,H,W)");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int x2 = 0; x2 < 2 * W; ++x2)
                out.at(c, y, x2) = x.at(c, y / 2, x2 / 2);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor y = a;
    for (std::size_t i = 0; i < y.numel(); ++i)
        y[i] = static_cast<float>(static_cast<double>(a[i]) + static_cast<double>(b[i]));
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
    Tensor y = a;
    for (std::size_t i = 0; i < y.numel(); ++i)
        y[i] = static_cast<float>(static_cast<double>(a[i]) * static_cast<double>(b[i]));
    return y;
}

Tensor scale(const Tensor& a, double s) {
    Tensor y = a;
    for (std::size_t i = 0; i < y.numel(); ++i)
        y[i] = static_cast<float>(static_cast<double>(a[i]) * s);
    return y;
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("numeric_gradient: eps must be positive");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + eps;
        const double fp = f(probe);
        probe[i] = x0 - eps;
        const double fm = f(probe);
        probe[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::invalid_argument("numeric_gradient: non-finite value at coordinate " +
                                        std::to_string(i));
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::invalid_argument("dt1: truncated stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kDt1Magic[4] = {'D', 'T', '1', '\n'};

}  // namespace

void write_dt1(std::ostream& os, const Tensor& t) {
    os.write(kDt1Magic, 4);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) write_u32(os, static_cast<std::uint32_t>(t.dim(a)));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits;
        float v = t[i];
        std::memcpy(&bits, &v, 4);
        write_u32(os, bits);
    }
    if (!os) throw std::runtime_error("dt1: write failed");
}

Tensor read_dt1(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kDt1Magic, 4) != 0)
        throw std::invalid_argument("dt1: bad magic");
    const std::uint32_t rank = read_u32(is);
    if (rank == 0 || rank > 8) throw std::invalid_argument("dt1: unreasonable rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) {
        const std::uint32_t v = read_u32(is);
        if (v == 0 || v > (1u << 28)) throw std::invalid_argument("dt1: unreasonable dimension");
        d = static_cast<int>(v);
    }
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<float> values(n);
    for (auto& v : values) {
        const std::uint32_t bits = read_u32(is);
        std::memcpy(&v, &bits, 4);
    }
    return Tensor(std::move(shape), std::move(values));
}

void save_dt1(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("dt1: cannot open " + path + " for writing");
    write_dt1(os, t);
}

Tensor load_dt1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("dt1: cannot open " + path);
    return read_dt1(is);
}

}  // namespace dsnet
