#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "dsnet/rng.hpp"
#include "dsnet/tensor.hpp"

using namespace dsnet;

namespace {

// Direct convolution written independently of the library's patch-gather
// implementation: walk the kernel over the padded input per output element.
Tensor conv2d_direct(const Tensor& in, const Tensor& w, const Tensor* bias, int stride,
                     int padding) {
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int O = w.dim(0), k = w.dim(2);
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    Tensor out({O, Ho, Wo});
    for (int o = 0; o < O; ++o)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int y = oy * stride - padding + ky;
                            const int x = ox * stride - padding + kx;
                            if (y < 0 || y >= H || x < 0 || x >= W) continue;
                            acc += static_cast<double>(in.at(c, y, x)) *
                                   static_cast<double>(
                                       w[static_cast<std::size_t>(((o * C + c) * k + ky) * k + kx)]);
                        }
                out.at(o, oy, ox) = static_cast<float>(acc);
            }
    return out;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping and element access") {
    Tensor t({2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    CHECK(t.dim(0) == 2);
    t.at(1, 2, 3) = 5.0f;
    CHECK(t[23] == 5.0f);
    CHECK_THROWS_AS(Tensor({2, 0, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);
}

TEST_CASE("conv2d matches a direct reimplementation across strides and paddings") {
    std::mt19937_64 rng(101);
    for (const auto& [C, H, W, O, k, stride, padding] :
         std::vector<std::array<int, 7>>{{1, 5, 5, 1, 1, 1, 0},
                                         {3, 8, 6, 4, 3, 1, 1},
                                         {2, 9, 9, 5, 3, 2, 1},
                                         {4, 7, 7, 2, 5, 2, 2},
                                         {3, 6, 10, 3, 1, 2, 0}}) {
        const Tensor in = Tensor::random_uniform({C, H, W}, -1.0f, 1.0f, rng);
        const Tensor w = Tensor::random_uniform({O, C, k, k}, -0.5f, 0.5f, rng);
        const Tensor b = Tensor::random_uniform({O}, -0.2f, 0.2f, rng);
        const Tensor got = conv2d(in, w, &b, stride, padding);
        const Tensor want = conv2d_direct(in, w, &b, stride, padding);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d validates its operands") {
    Tensor x({2, 4, 4});
    Tensor w({3, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, Tensor({3, 5, 3, 3}), nullptr, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, w, nullptr, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, -1), std::invalid_argument);
    Tensor bad_bias({2});
    CHECK_THROWS_AS(conv2d(x, w, &bad_bias, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(Tensor({2, 2, 2}), w, nullptr, 1, 0), std::invalid_argument);
}

TEST_CASE("pooling reduces windows by max or mean") {
    Tensor x({1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    const Tensor mx = pool2d(x, Pool::Max, 2, 2, 0);
    CHECK(mx.shape() == std::vector<int>{1, 2, 2});
    CHECK(mx[0] == 6.0f);
    CHECK(mx[1] == 8.0f);
    CHECK(mx[2] == 14.0f);
    CHECK(mx[3] == 16.0f);
    const Tensor av = pool2d(x, Pool::Avg, 2, 2, 0);
    CHECK(av[0] == doctest::Approx(3.5));
    CHECK(av[3] == doctest::Approx(13.5));

    // same-size max pooling with odd kernel keeps the shape; padding is
    // ignored by Max (never selected) and excluded from Avg denominators
    const Tensor same = pool2d(x, Pool::Max, 3, 1, 1);
    CHECK(same.shape() == x.shape());
    CHECK(same.at(0, 0, 0) == 6.0f);
    const Tensor avp = pool2d(Tensor::full({1, 2, 2}, 1.0f), Pool::Avg, 3, 1, 1);
    CHECK(avp[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(pool2d(x, Pool::Max, 2, 2, 2), std::invalid_argument);
}

TEST_CASE("global pooling collapses each channel") {
    Tensor x({2, 2, 3}, {1, 2, 3, 4, 5, 6, 10, 10, 10, 10, 10, 40});
    const Tensor avg = global_pool(x, Pool::Avg);
    const Tensor mx = global_pool(x, Pool::Max);
    CHECK(avg.shape() == std::vector<int>{2, 1, 1});
    CHECK(avg[0] == doctest::Approx(3.5));
    CHECK(avg[1] == doctest::Approx(15.0));
    CHECK(mx[0] == 6.0f);
    CHECK(mx[1] == 40.0f);
}

TEST_CASE("batch norm at inference applies the folded affine transform") {
    std::mt19937_64 rng(7);
    const Tensor x = Tensor::random_uniform({3, 4, 4}, -2.0f, 2.0f, rng);
    Tensor gamma({3}, {1.0f, 2.0f, 0.5f});
    Tensor beta({3}, {0.0f, -1.0f, 3.0f});
    Tensor mean({3}, {0.1f, -0.2f, 0.0f});
    Tensor var({3}, {1.0f, 4.0f, 0.25f});
    const Tensor y = batch_norm_inference(x, mean, var, gamma, beta, 1e-5);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) {
            const double xn = (x[static_cast<std::size_t>(c * 16 + i)] - mean[c]) /
                              std::sqrt(static_cast<double>(var[c]) + 1e-5);
            const double want = gamma[c] * xn + beta[c];
            CHECK(y[static_cast<std::size_t>(c * 16 + i)] == doctest::Approx(want).epsilon(1e-6));
        }
}

TEST_CASE("layer norm standardizes the trailing axis") {
    std::mt19937_64 rng(8);
    const Tensor x = Tensor::random_uniform({5, 9}, -3.0f, 3.0f, rng);
    const Tensor ones = Tensor::full({9}, 1.0f);
    const Tensor zeros = Tensor::full({9}, 0.0f);
    const Tensor y = layer_norm(x, ones, zeros, 1e-6);
    for (int r = 0; r < 5; ++r) {
        double m = 0.0, v = 0.0;
        for (int c = 0; c < 9; ++c) m += y[static_cast<std::size_t>(r * 9 + c)];
        m /= 9.0;
        for (int c = 0; c < 9; ++c) {
            const double d = y[static_cast<std::size_t>(r * 9 + c)] - m;
            v += d * d;
        }
        CHECK(std::abs(m) < 1e-5);
        CHECK(v / 9.0 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("matmul agrees with an explicit triple loop") {
    std::mt19937_64 rng(9);
    const Tensor a = Tensor::random_uniform({4, 6}, -1.0f, 1.0f, rng);
    const Tensor b = Tensor::random_uniform({6, 3}, -1.0f, 1.0f, rng);
    const Tensor c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int>{4, 3});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 6; ++k)
                acc += static_cast<double>(a[static_cast<std::size_t>(i * 6 + k)]) *
                       b[static_cast<std::size_t>(k * 3 + j)];
            CHECK(c[static_cast<std::size_t>(i * 3 + j)] == doctest::Approx(acc).epsilon(1e-6));
        }
    CHECK_THROWS_AS(matmul(a, Tensor({5, 3})), std::invalid_argument);
}

TEST_CASE("softmax rows are stochastic and shift-invariant") {
    Tensor x({2, 3}, {1.0f, 2.0f, 3.0f, 1001.0f, 1002.0f, 1003.0f});
    const Tensor p = softmax_lastaxis(x);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-9));
    // adding a constant to a row must not change it (stability shift)
    for (int j = 0; j < 3; ++j)
        CHECK(p[static_cast<std::size_t>(j)] ==
              doctest::Approx(p[static_cast<std::size_t>(3 + j)]).epsilon(1e-6));
    CHECK(p[2] > p[1]);
    CHECK(p[1] > p[0]);
}

TEST_CASE("activations match their closed forms") {
    for (double x : {-2.0, -0.5, 0.0, 0.75, 3.0}) {
        const double sig = 1.0 / (1.0 + std::exp(-x));
        CHECK(activate(Act::Sigmoid, x) == doctest::Approx(sig).epsilon(1e-12));
        CHECK(activate(Act::SiLU, x) == doctest::Approx(x * sig).epsilon(1e-12));
        CHECK(activate(Act::ReLU, x) == (x > 0 ? x : 0.0));
        CHECK(activate(Act::LeakyReLU, x) == doctest::Approx(x > 0 ? x : 0.1 * x));
        CHECK(activate(Act::Mish, x) ==
              doctest::Approx(x * std::tanh(std::log1p(std::exp(x)))).epsilon(1e-9));
        CHECK(activate(Act::Identity, x) == x);
    }
    CHECK(activate(Act::GeLU, 0.0) == doctest::Approx(0.0));
    CHECK(activate(Act::GeLU, 3.0) ==
          doctest::Approx(0.5 * 3.0 * (1.0 + std::erf(3.0 / std::sqrt(2.0)))).epsilon(1e-9));
}

TEST_CASE("concat, slice, transpose, reshape and upsample rearrange values") {
    Tensor a({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor b({1, 2, 2}, {9, 10, 11, 12});
    const Tensor cat = concat(a, b, 0);
    REQUIRE(cat.shape() == std::vector<int>{3, 2, 2});
    CHECK(cat[8] == 9.0f);

    const Tensor sl = slice(cat, 0, 1, 2);
    REQUIRE(sl.shape() == std::vector<int>{2, 2, 2});
    CHECK(sl[0] == 5.0f);
    CHECK_THROWS_AS(slice(cat, 0, 2, 2), std::invalid_argument);

    // CHW -> HWC -> CHW roundtrip
    const Tensor hwc = transpose(a, std::vector<int>{1, 2, 0});
    REQUIRE(hwc.shape() == std::vector<int>{2, 2, 2});
    CHECK(hwc.at(0, 0, 0) == a.at(0, 0, 0));
    CHECK(hwc.at(0, 1, 0) == a.at(0, 0, 1));
    CHECK(hwc.at(1, 0, 1) == a.at(1, 1, 0));
    const Tensor chw = transpose(hwc, std::vector<int>{2, 0, 1});
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(chw[i] == a[i]);

    Tensor r = reshape(a, {4, 2});
    CHECK(r.dim(0) == 4);
    CHECK_THROWS_AS(reshape(a, {3, 3}), std::invalid_argument);

    const Tensor up = upsample_nearest2x(b);
    REQUIRE(up.shape() == std::vector<int>{1, 4, 4});
    CHECK(up.at(0, 0, 0) == 9.0f);
    CHECK(up.at(0, 0, 1) == 9.0f);
    CHECK(up.at(0, 1, 1) == 9.0f);
    CHECK(up.at(0, 3, 3) == 12.0f);
}

TEST_CASE("elementwise helpers require matching shapes") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {10, 20, 30, 40});
    const Tensor s = add(a, b);
    CHECK(s[3] == 44.0f);
    const Tensor m = mul(a, b);
    CHECK(m[2] == 90.0f);
    const Tensor sc = scale(a, 0.5f);
    CHECK(sc[1] == 1.0f);
    CHECK_THROWS_AS(add(a, Tensor({4})), std::invalid_argument);
}

TEST_CASE("tensor blobs roundtrip bitwise and reject corrupt headers") {
    std::mt19937_64 rng(10);
    const Tensor t = Tensor::random_uniform({3, 5, 2}, -10.0f, 10.0f, rng);
    std::stringstream buf;
    write_dt1(buf, t);
    const Tensor back = read_dt1(buf);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);

    std::stringstream bad("NOPE");
    CHECK_THROWS_AS(read_dt1(bad), std::invalid_argument);

    // truncated payload
    std::stringstream full;
    write_dt1(full, t);
    const std::string bytes = full.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS(read_dt1(cut));
}

TEST_CASE("numeric gradient differentiates a known function") {
    const std::vector<double> at = {1.0, -0.5, 0.25};
    // f(x) = x0*x1 + sin(x2)
    auto f = [](std::span<const double> v) { return v[0] * v[1] + std::sin(v[2]); };
    const auto g = numeric_gradient(f, at, 1e-6);
    CHECK(g[0] == doctest::Approx(-0.5).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(g[2] == doctest::Approx(std::cos(0.25)).epsilon(1e-6));
}

TEST_CASE("rng helpers are deterministic and well-distributed") {
    std::mt19937_64 a(123), b(123);
    for (int i = 0; i < 100; ++i) {
        const double u = uniform01(a);
        CHECK(u == uniform01(b));
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    std::mt19937_64 c(5);
    for (int i = 0; i < 200; ++i) CHECK(uniform_index(c, 7) < 7);

    std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
    std::mt19937_64 d(9), e(9);
    auto w = v;
    shuffle(v, d);
    shuffle(w, e);
    CHECK(v == w);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

    CHECK(mix64(1) != mix64(2));
    CHECK(mix64(0x123456789abcdefull) == mix64(0x123456789abcdefull));
}
