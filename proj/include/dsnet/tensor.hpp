#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dsnet {

// Dense row-major tensor of 32-bit floats. Storage is always f32; every
// reduction (convolution, pooling averages, matmul, norm statistics, softmax
// sums) accumulates in f64 and rounds once at the end, so results do not
// depend on how a kernel is blocked or vectorized.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);  // zero-filled
    Tensor(std::vector<int> shape, std::vector<float> values);

    static Tensor full(std::vector<int> shape, float value);
    // i.i.d. uniform [lo, hi) fill in flat index order
    static Tensor random_uniform(std::vector<int> shape, float lo, float hi,
                                 std::mt19937_64& rng);

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    const std::vector<int>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;  // e.g. "3x416x416"

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // rank-3 (C,H,W) element access
    float& at(int c, int y, int x);
    float at(int c, int y, int x) const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

enum class Act { Sigmoid, SiLU, LeakyReLU, Mish, GeLU, ReLU, Identity };
enum class Pool { Max, Avg };

// Scalar activations, evaluated in f64 and rounded to f32 by the tensor
// wrapper. LeakyReLU uses slope 0.1 on the negative side; GeLU is the exact
// erf form 0.5*x*(1+erf(x/sqrt(2))).
double activate(Act kind, double x);
Tensor activation(Act kind, const Tensor& x);

// 2-D convolution, NCHW without the N. input (C,H,W), weight (O,C,k,k),
// bias (O) or null. Each output element is one f64 accumulation over the
// receptive field in (channel, kernel row, kernel col) order, bias first.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              int stride, int padding);

// Max / average pooling. Padding contributes -inf to max windows and is
// excluded from average divisors (the divisor is the count of in-bounds
// cells). Window scan order is (kernel row, kernel col); averages accumulate
// in f64. Requires padding < k so every window sees at least one real cell.
Tensor pool2d(const Tensor& input, Pool kind, int k, int stride, int padding);

// Whole-plane reduction per channel: (C,H,W) -> (C,1,1)
Tensor global_pool(const Tensor& input, Pool kind);

// Inference-time batch norm over channels of (C,H,W):
// y = (x - mean[c]) / sqrt(var[c] + eps) * gamma[c] + beta[c]
Tensor batch_norm_inference(const Tensor& x, const Tensor& mean, const Tensor& var,
                            const Tensor& gamma, const Tensor& beta, double eps);

// Layer norm over the last axis with biased variance (divide by C).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// (M,K) x (K,N) -> (M,N); each output element is one f64 dot in k order.
Tensor matmul(const Tensor& a, const Tensor& b);

// Numerically stable softmax over the last axis: subtract the row max,
// exponentiate and sum in f64 in index order, divide, round to f32.
Tensor softmax_lastaxis(const Tensor& x);

Tensor concat(std::span<const Tensor* const> parts, int axis);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor transpose(const Tensor& x, std::span<const int> perm);
Tensor reshape(const Tensor& x, std::vector<int> new_shape);

// Nearest-neighbor 2x spatial upsample of (C,H,W).
Tensor upsample_nearest2x(const Tensor& x);

// Elementwise helpers (f64 per-element math, f32 storage)
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// Central differences (f(x+e_i*eps) - f(x-e_i*eps)) / (2*eps); rejects
// non-finite f values naming the offending coordinate.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps);

// Tensor container: magic "DT1\n", little-endian u32 rank, u32 dims[rank],
// then raw little-endian f32 values in row-major order.
void write_dt1(std::ostream& os, const Tensor& t);
Tensor read_dt1(std::istream& is);
void save_dt1(const std::string& path, const Tensor& t);
Tensor load_dt1(const std::string& path);

}  // namespace dsnet
