#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "oracles.hpp"
#include "xdreid/tensor.hpp"

using namespace xdreid;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false,
                     double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(shape), lo, hi, rng, requires_grad);
}

// Max relative error between the analytic gradient of `fwd` w.r.t. `param`
// and central finite differences (step 1e-5).
double gradcheck(Tensor param, const std::function<Tensor()>& fwd) {
    param.zero_grad();
    Tensor loss = fwd();
    backward(loss);
    std::vector<double> analytic = param.grad();
    auto eval = [&]() {
        NoGradGuard ng;
        return fwd().item();
    };
    std::vector<double> numeric = oracle::finite_diff_grad(param.data(), eval);
    return oracle::max_rel_error(analytic, numeric);
}

}  // namespace

TEST_CASE("conv2d closed-form cases") {
    auto ones_in = Tensor::full({1, 1, 3, 3}, 1.0);
    auto ones_k = Tensor::full({1, 1, 3, 3}, 1.0);
    auto zero_b = Tensor::zeros({1});
    auto out = conv2d(ones_in, ones_k, zero_b, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.item() == doctest::Approx(9.0).epsilon(1e-12));

    std::mt19937_64 rng(7);
    auto x = random_tensor({2, 2, 5, 4}, rng);
    auto idk = Tensor::full({2, 2, 1, 1}, 0.0);
    // identity kernel: channel passthrough
    idk.data()[0] = 1.0;               // out0 <- in0
    idk.data()[3] = 1.0;               // out1 <- in1
    auto idout = conv2d(x, idk, Tensor::zeros({2}), 1, 0);
    REQUIRE(idout.shape() == x.shape());
    for (size_t i = 0; i < x.data().size(); ++i) CHECK(idout.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d matches naive loop oracle") {
    std::mt19937_64 rng(11);
    for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
        auto x = random_tensor({2, 3, 8, 8}, rng);
        auto w = random_tensor({4, 3, 3, 3}, rng);
        auto b = random_tensor({4}, rng);
        auto out = conv2d(x, w, b, stride, pad);
        int oh = 0, ow = 0;
        auto ref = oracle::conv2d_naive(x.data(), 2, 3, 8, 8, w.data(), 4, 3, 3, b.data(), stride,
                                        pad, oh, ow);
        REQUIRE(out.shape() == Shape{2, 4, oh, ow});
        for (size_t i = 0; i < ref.size(); ++i) CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d channel mismatch raises dimension error") {
    auto x = Tensor::zeros({1, 3, 4, 4});
    auto w = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, Tensor::zeros({2}), 1, 1), DimensionError);
    auto wbig = Tensor::zeros({1, 3, 9, 9});
    CHECK_THROWS_AS(conv2d(x, wbig, Tensor::zeros({1}), 1, 0), DimensionError);
}

TEST_CASE("linear closed-form and oracle") {
    std::mt19937_64 rng(3);
    auto x = random_tensor({3, 4}, rng);
    auto eye = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) eye.data()[i * 4 + i] = 1.0;
    auto out = linear(x, eye, Tensor::zeros({4}));
    for (size_t i = 0; i < x.data().size(); ++i) CHECK(out.data()[i] == doctest::Approx(x.data()[i]));

    auto zw = Tensor::zeros({4, 2});
    auto bias = Tensor::from_data({2}, {0.5, -1.25});
    auto outb = linear(x, zw, bias);
    for (int r = 0; r < 3; ++r) {
        CHECK(outb.data()[r * 2 + 0] == doctest::Approx(0.5));
        CHECK(outb.data()[r * 2 + 1] == doctest::Approx(-1.25));
    }

    auto a = random_tensor({3, 5}, rng);
    auto w = random_tensor({5, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto got = linear(a, w, b);
    auto ref = oracle::matmul_naive(a.data(), 3, 5, w.data(), 2, b.data());
    for (size_t i = 0; i < ref.size(); ++i) CHECK(got.data()[i] == doctest::Approx(ref[i]).epsilon(1e-6));

    CHECK_THROWS_AS(linear(a, Tensor::zeros({4, 2}), b), DimensionError);
}

TEST_CASE("instance_norm semantics") {
    auto constant = Tensor::full({1, 1, 2, 2}, 3.5);
    auto out = instance_norm(constant);
    for (double v : out.data()) CHECK(v == doctest::Approx(0.0));

    auto ch = Tensor::from_data({1, 1, 1, 4}, {1, 2, 3, 4});
    auto normed = instance_norm(ch);
    auto mo = oracle::moments(normed.data().data(), 4);
    CHECK(mo.mean == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(mo.stddev == doctest::Approx(1.0).epsilon(1e-5));

    std::mt19937_64 rng(23);
    auto x = random_tensor({2, 4, 6, 6}, rng);
    auto y = instance_norm(x);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 4; ++c) {
            auto m = oracle::moments(y.data().data() + (b * 4 + c) * 36, 36);
            CHECK(m.mean == doctest::Approx(0.0).epsilon(1e-9));
            CHECK(m.stddev == doctest::Approx(1.0).epsilon(1e-4));
        }

    CHECK_THROWS_AS(instance_norm(Tensor::zeros({1, 2, 1, 1})), ArgumentError);
}

TEST_CASE("adain semantics") {
    std::mt19937_64 rng(29);
    auto x = random_tensor({1, 1, 1, 4}, rng);
    x.data() = {1, 2, 3, 4};
    auto in_ref = instance_norm(x);
    auto same = adain(x, Tensor::full({1, 1}, 1.0), Tensor::zeros({1, 1}));
    for (size_t i = 0; i < same.data().size(); ++i)
        CHECK(same.data()[i] == doctest::Approx(in_ref.data()[i]));

    auto shifted = adain(x, Tensor::full({1, 1}, 2.0), Tensor::full({1, 1}, 3.0));
    auto mo = oracle::moments(shifted.data().data(), 4);
    CHECK(mo.mean == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(mo.stddev == doctest::Approx(2.0).epsilon(1e-4));

    auto big = random_tensor({2, 3, 4, 4}, rng);
    auto sc = random_tensor({2, 3}, rng, false, 0.5, 2.0);
    auto bi = random_tensor({2, 3}, rng, false, -1.0, 1.0);
    auto out = adain(big, sc, bi);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c) {
            auto m = oracle::moments(out.data().data() + (b * 3 + c) * 16, 16);
            CHECK(m.mean == doctest::Approx(bi.data()[b * 3 + c]).epsilon(1e-4));
            CHECK(m.stddev == doctest::Approx(std::fabs(sc.data()[b * 3 + c])).epsilon(1e-3));
        }

    CHECK_THROWS_AS(adain(big, Tensor::zeros({2, 4}), bi), DimensionError);
}

TEST_CASE("instance_norm then adain lands on requested statistics") {
    std::mt19937_64 rng(31);
    auto x = random_tensor({2, 2, 5, 5}, rng);
    auto s = Tensor::from_data({2, 2}, {1.5, -0.7, 2.0, 0.3});
    auto b = Tensor::from_data({2, 2}, {0.1, -2.0, 0.0, 1.0});
    auto y = adain(instance_norm(x), s, b);
    for (int i = 0; i < 4; ++i) {
        auto m = oracle::moments(y.data().data() + i * 25, 25);
        CHECK(m.mean == doctest::Approx(b.data()[i]).epsilon(1e-4));
        CHECK(m.stddev == doctest::Approx(std::fabs(s.data()[i])).epsilon(1e-4));
    }
}

TEST_CASE("activations and pooling") {
    auto v = Tensor::from_data({1, 1}, {-1.0});
    CHECK(leaky_relu(v, 0.2).data()[0] == doctest::Approx(-0.2));

    auto logits = Tensor::full({1, 4}, 0.7);
    auto p = softmax(logits);
    for (double x : p.data()) CHECK(x == doctest::Approx(0.25));

    std::mt19937_64 rng(37);
    auto img = random_tensor({1, 1, 4, 4}, rng);
    auto pooled = max_pool2d(img, 2);
    auto ref = oracle::max_pool_naive(img.data(), 1, 1, 4, 4, 2);
    REQUIRE(pooled.shape() == Shape{1, 1, 2, 2});
    for (size_t i = 0; i < ref.size(); ++i) CHECK(pooled.data()[i] == doctest::Approx(ref[i]));

    CHECK_THROWS_AS(max_pool2d(img, 0), ArgumentError);
    CHECK_THROWS_AS(upsample_nearest(img, -1), ArgumentError);

    auto up = upsample_nearest(img, 2);
    REQUIRE(up.shape() == Shape{1, 1, 8, 8});
    CHECK(up.data()[0] == img.data()[0]);
    CHECK(up.data()[1] == img.data()[0]);

    auto rgb = random_tensor({2, 3, 3, 2}, rng);
    auto gray = grayscale(rgb);
    REQUIRE(gray.shape() == Shape{2, 1, 3, 2});
    CHECK(gray.data()[0] == doctest::Approx(0.299 * rgb.data()[0] + 0.587 * rgb.data()[6] +
                                            0.114 * rgb.data()[12]));
    CHECK_THROWS_AS(grayscale(Tensor::zeros({1, 4, 3, 2})), DimensionError);
}

TEST_CASE("softmax rows are non-negative and sum to 1") {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 20; ++t) {
        auto logits = random_tensor({3, 7}, rng, false, -30.0, 30.0);
        auto p = softmax(logits);
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int j = 0; j < 7; ++j) {
                CHECK(p.data()[r * 7 + j] >= 0.0);
                s += p.data()[r * 7 + j];
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("forward passes are deterministic") {
    std::mt19937_64 rng(43);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    auto a1 = conv2d(x, w, b, 2, 1);
    auto a2 = conv2d(x, w, b, 2, 1);
    CHECK(std::memcmp(a1.data().data(), a2.data().data(), a1.data().size() * sizeof(double)) == 0);
    auto s1 = instance_norm(a1);
    auto s2 = instance_norm(a2);
    CHECK(std::memcmp(s1.data().data(), s2.data().data(), s1.data().size() * sizeof(double)) == 0);
}

TEST_CASE("backward closed-form cases") {
    std::mt19937_64 rng(47);
    auto x = random_tensor({2, 3, 4, 2}, rng, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

    x.zero_grad();
    backward(scale(sum(mul(x, x)), 0.5));
    for (size_t i = 0; i < x.data().size(); ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]));

    // diamond reuse: each node visited once, so d(sum(x+x))/dx = 2 exactly
    auto y = random_tensor({3, 3}, rng, true);
    backward(sum(add(y, y)));
    for (double g : y.grad()) CHECK(g == doctest::Approx(2.0));

    CHECK_THROWS_AS(backward(x), ArgumentError);  // non-scalar
}

TEST_CASE("composite graph passes finite-difference check") {
    std::mt19937_64 rng(53);
    auto img = random_tensor({2, 3, 6, 4}, rng, true);
    auto w = random_tensor({2, 3, 3, 3}, rng, true, -0.5, 0.5);
    auto b = random_tensor({2}, rng, true, -0.1, 0.1);
    auto sc = random_tensor({2, 2}, rng, true, 0.5, 1.5);
    auto bi = random_tensor({2, 2}, rng, true, -0.5, 0.5);
    auto lw = random_tensor({12, 3}, rng, true, -0.5, 0.5);
    auto lb = random_tensor({3}, rng, true, -0.1, 0.1);
    std::vector<int> labels = {0, 2};

    auto fwd = [&]() {
        auto h1 = conv2d(img, w, b, 2, 1);            // 2 x 2 x 3 x 2
        auto h2 = adain(h1, sc, bi);
        auto h3 = leaky_relu(h2, 0.2);
        auto flat = reshape(h3, {2, 12});
        auto logits = linear(flat, lw, lb);
        return cross_entropy(logits, labels);
    };

    for (auto p : {img, w, b, sc, bi, lw, lb}) {
        CHECK(gradcheck(p, fwd) <= 1e-4);
    }
}

TEST_CASE("per-op finite-difference checks on random inputs") {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor({1, 2, 4, 4}, rng, true);
        CHECK(gradcheck(x, [&] { return mean(abs(instance_norm(x))); }) <= 1e-4);
        CHECK(gradcheck(x, [&] { return sum(max_pool2d(x, 2)); }) <= 1e-4);
        CHECK(gradcheck(x, [&] { return mean(upsample_nearest(leaky_relu(x, 0.2), 2)); }) <= 1e-4);
        CHECK(gradcheck(x, [&] { return mean(mul(sigmoid(x), tanh(x))); }) <= 1e-4);
        CHECK(gradcheck(x, [&] { return mean(avg_pool2d(x, 2)); }) <= 1e-4);

        auto rgb = random_tensor({1, 3, 4, 2}, rng, true);
        CHECK(gradcheck(rgb, [&] { return mean(grayscale(rgb)); }) <= 1e-4);

        auto m = random_tensor({3, 6}, rng, true);
        CHECK(gradcheck(m, [&] { return mean(mul(softmax(m), softmax(m))); }) <= 1e-4);
        CHECK(gradcheck(m, [&] { return sum(slice_cols(m, 1, 3)); }) <= 1e-4);
        CHECK(gradcheck(m, [&] { return mean(log(add_scalar(sigmoid(m), 0.5))); }) <= 1e-4);
    }
}

TEST_CASE("grad mode guard stops graph construction") {
    auto x = Tensor::full({2, 2}, 1.0, true);
    NoGradGuard ng;
    auto y = sum(x);
    CHECK_THROWS_AS(backward(y), ArgumentError);
}

TEST_CASE("clamp gradient passes only inside the interval") {
    auto x = Tensor::from_data({3}, {-2.0, 0.25, 2.0}, true);
    backward(sum(clamp(x, -1.0, 1.0)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("finite outputs on finite inputs") {
    std::mt19937_64 rng(61);
    auto x = random_tensor({2, 3, 8, 4}, rng, false, -5.0, 5.0);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    CHECK(all_finite(conv2d(x, w, Tensor::zeros({4}), 1, 1)));
    CHECK(all_finite(instance_norm(x)));
    CHECK(all_finite(softmax(reshape(x, {8, 24}))));
}
