// Convolution (zero-padded and boundary-rescaled), pooling, the two head
// forms and their conversion, and batch normalization.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fosnet/grad_check.hpp"
#include "fosnet/layers.hpp"

using namespace fosnet;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Direct nested-loop convolution over a zero-padded input, the independent
// reference for both convolution ops.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                      std::size_t pad) {
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), Ci = x.extent(3);
    const std::size_t kh = w.extent(0), kw = w.extent(1), Co = w.extent(3);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor out({B, Ho, Wo, Co});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j)
                for (std::size_t co = 0; co < Co; ++co) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    for (std::size_t di = 0; di < kh; ++di)
                        for (std::size_t dj = 0; dj < kw; ++dj) {
                            const std::ptrdiff_t r = std::ptrdiff_t(i * stride + di) -
                                                     std::ptrdiff_t(pad);
                            const std::ptrdiff_t c = std::ptrdiff_t(j * stride + dj) -
                                                     std::ptrdiff_t(pad);
                            if (r < 0 || c < 0 || r >= std::ptrdiff_t(H) ||
                                c >= std::ptrdiff_t(W))
                                continue;
                            for (std::size_t ci = 0; ci < Ci; ++ci)
                                acc += x(b, std::size_t(r), std::size_t(c), ci) *
                                       w(di, dj, ci, co);
                        }
                    out(b, i, j, co) = acc;
                }
    return out;
}

// Counts zero-padded cells under every output window, the independent
// reference for the boundary-scaling mask.
Tensor scale_reference(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                       std::size_t stride, std::size_t pad) {
    const std::size_t Ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (w + 2 * pad - kw) / stride + 1;
    Tensor s({Ho, Wo});
    for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
            std::size_t padded = 0;
            for (std::size_t di = 0; di < kh; ++di)
                for (std::size_t dj = 0; dj < kw; ++dj) {
                    const std::ptrdiff_t r = std::ptrdiff_t(i * stride + di) -
                                             std::ptrdiff_t(pad);
                    const std::ptrdiff_t c = std::ptrdiff_t(j * stride + dj) -
                                             std::ptrdiff_t(pad);
                    if (r < 0 || c < 0 || r >= std::ptrdiff_t(h) || c >= std::ptrdiff_t(w))
                        ++padded;
                }
            s(i, j) = double(kh * kw) / double(kh * kw - padded);
        }
    return s;
}

ConvParams fixed_conv(Tensor w, Tensor b, std::size_t stride, std::size_t pad) {
    ConvParams p;
    p.w.value = std::move(w);
    p.b.value = std::move(b);
    p.stride = stride;
    p.pad = pad;
    return p;
}

}  // namespace

TEST_CASE("single-pixel input through an all-ones kernel keeps its value") {
    ConvParams p = fixed_conv(Tensor::ones({3, 3, 1, 1}), Tensor({1}), 1, 1);
    Tape tape;
    Value x = tape.constant(Tensor::from({1, 1, 1, 1}, {5.0}));
    const Tensor& out = conv2d_zero_pad(tape, x, p).value();
    REQUIRE(out.numel() == 1);
    CHECK(out[0] == 5.0);
}

TEST_CASE("all-zero input broadcasts the bias everywhere") {
    Rng rng(2);
    ConvParams p = ConvParams::he_init(rng, 3, 3, 2, 4, 1, 1);
    p.b.value = Tensor::from({4}, {1.0, -2.0, 0.5, 3.0});
    Tape tape;
    const Tensor& out = conv2d_zero_pad(tape, tape.constant(Tensor({1, 5, 5, 2})), p).value();
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(out(std::size_t(0), i, j, c) == p.b.value[c]);
}

TEST_CASE("convolution matches the nested-loop reference on random inputs") {
    Rng rng(5);
    for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
        Tensor x = random_tensor(rng, {2, 5, 5, 2});
        Tensor w = random_tensor(rng, {3, 3, 2, 3});
        Tensor b = random_tensor(rng, {3});
        ConvParams p = fixed_conv(w, b, stride, 1);
        Tape tape;
        const Tensor& got = conv2d_zero_pad(tape, tape.constant(x), p).value();
        Tensor want = conv_reference(x, w, b, stride, 1);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < want.numel(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("convolution rejects channel mismatches") {
    Rng rng(6);
    ConvParams p = ConvParams::he_init(rng, 3, 3, 4, 2, 1, 1);
    Tape tape;
    Value x = tape.constant(Tensor({1, 5, 5, 3}));
    CHECK_THROWS_AS(conv2d_zero_pad(tape, x, p), ShapeError);
}

TEST_CASE("boundary scale mask holds the documented corner and edge ratios") {
    Rng rng(7);
    ConvParams p = ConvParams::he_init(rng, 3, 3, 1, 1, 1, 1);
    PartialConvPlan plan = build_partial_plan(4, 4, p);
    REQUIRE(plan.scale.shape() == Shape{4, 4});
    CHECK(plan.scale(0, 0) == 9.0 / 4.0);  // corner window: 5 padded cells
    CHECK(plan.scale(0, 1) == 9.0 / 6.0);  // edge window: 3 padded cells
    CHECK(plan.scale(1, 1) == 1.0);
    CHECK(plan.scale(3, 3) == 9.0 / 4.0);
    CHECK(plan.scale(2, 0) == 9.0 / 6.0);
}

TEST_CASE("unpadded geometries get an all-ones scale mask") {
    Rng rng(8);
    ConvParams k3 = ConvParams::he_init(rng, 3, 3, 1, 1, 1, 0);
    PartialConvPlan plan = build_partial_plan(6, 6, k3);
    for (std::size_t i = 0; i < plan.scale.numel(); ++i) CHECK(plan.scale[i] == 1.0);

    ConvParams k1 = ConvParams::he_init(rng, 1, 1, 1, 1, 1, 0);
    PartialConvPlan plan1 = build_partial_plan(4, 4, k1);
    for (std::size_t i = 0; i < plan1.scale.numel(); ++i) CHECK(plan1.scale[i] == 1.0);
}

TEST_CASE("a window made entirely of padding is a hard error") {
    Rng rng(9);
    ConvParams p = ConvParams::he_init(rng, 1, 1, 1, 1, 1, 1);
    CHECK_THROWS_WITH_AS(build_partial_plan(4, 4, p), doctest::Contains("only padding"),
                         ShapeError);
}

TEST_CASE("scale masks equal the counting reference on every geometry the model uses") {
    Rng rng(10);
    ConvParams p = ConvParams::he_init(rng, 3, 3, 1, 1, 2, 1);
    for (std::size_t hw : {std::size_t(32), std::size_t(16), std::size_t(8)}) {
        PartialConvPlan plan = build_partial_plan(hw, hw, p);
        Tensor want = scale_reference(hw, hw, 3, 3, 2, 1);
        REQUIRE(plan.scale.shape() == want.shape());
        for (std::size_t i = 0; i < want.numel(); ++i) CHECK(plan.scale[i] == want[i]);
    }
}

TEST_CASE("rescaled convolution lifts boundary responses to the interior level") {
    ConvParams p = fixed_conv(Tensor::ones({3, 3, 1, 1}), Tensor({1}), 1, 1);
    PartialConvPlan plan = build_partial_plan(4, 4, p);
    Tape tape;
    Value x = tape.constant(Tensor::ones({1, 4, 4, 1}));
    const Tensor vanilla = conv2d_zero_pad(tape, x, p).value();
    const Tensor rescaled = partial_conv2d(tape, x, p, plan).value();
    CHECK(vanilla(std::size_t(0), 0, 0, std::size_t(0)) == 4.0);
    CHECK(vanilla(std::size_t(0), 1, 1, std::size_t(0)) == 9.0);
    // every output equals the interior response: 4 * 9/4 == 6 * 9/6 == 9
    for (std::size_t i = 0; i < rescaled.numel(); ++i) CHECK(rescaled[i] == 9.0);
}

TEST_CASE("rescaled convolution equals scale times vanilla plus bias on random inputs") {
    Rng rng(12);
    Tensor x = random_tensor(rng, {2, 6, 6, 3});
    Tensor w = random_tensor(rng, {3, 3, 3, 2});
    Tensor b = random_tensor(rng, {2});
    ConvParams p = fixed_conv(w, b, 1, 1);
    ConvParams nobias = fixed_conv(w, Tensor({2}), 1, 1);
    PartialConvPlan plan = build_partial_plan(6, 6, p);
    Tape tape;
    Value in = tape.constant(x);
    const Tensor got = partial_conv2d(tape, in, p, plan).value();
    const Tensor raw = conv2d_zero_pad(tape, in, nobias).value();
    for (std::size_t bi = 0; bi < 2; ++bi)
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                for (std::size_t c = 0; c < 2; ++c)
                    CHECK(got(bi, i, j, c) ==
                          doctest::Approx(plan.scale(i, j) * raw(bi, i, j, c) + b[c])
                              .epsilon(1e-12));
    // interior positions carry scale 1 and match the zero-padded op exactly
    ConvParams pb = fixed_conv(w, b, 1, 1);
    const Tensor vb = conv2d_zero_pad(tape, in, pb).value();
    for (std::size_t bi = 0; bi < 2; ++bi)
        for (std::size_t i = 1; i < 5; ++i)
            for (std::size_t j = 1; j < 5; ++j)
                for (std::size_t c = 0; c < 2; ++c)
                    CHECK(got(bi, i, j, c) == doctest::Approx(vb(bi, i, j, c)).epsilon(1e-13));
}

TEST_CASE("rescaled convolution rejects a plan built for another geometry") {
    Rng rng(13);
    ConvParams p = ConvParams::he_init(rng, 3, 3, 1, 1, 1, 1);
    PartialConvPlan plan = build_partial_plan(4, 4, p);
    Tape tape;
    Value x = tape.constant(Tensor({1, 6, 6, 1}));
    CHECK_THROWS_AS(partial_conv2d(tape, x, p, plan), ShapeError);
}

TEST_CASE("global average pooling reduces grids to channel means") {
    Tape tape;
    const Tensor c = global_avg_pool(tape.constant(Tensor::full({1, 3, 3, 2}, 4.5))).value();
    CHECK(c(std::size_t(0), std::size_t(0)) == 4.5);
    CHECK(c(std::size_t(0), std::size_t(1)) == 4.5);

    Value g = tape.constant(Tensor::from({1, 2, 2, 1}, {1, 2, 3, 4}));
    CHECK(global_avg_pool(g).value()[0] == 2.5);

    Rng rng(14);
    Tensor x = random_tensor(rng, {2, 3, 5, 4});
    const Tensor got = global_avg_pool(tape.constant(x)).value();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t ch = 0; ch < 4; ++ch) {
            double acc = 0;
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 5; ++j) acc += x(b, i, j, ch);
            CHECK(got(b, ch) == doctest::Approx(acc / 15.0).epsilon(1e-14));
        }
}

TEST_CASE("per-cell scoring with identity weights passes features through") {
    DenseParams d;
    d.w.value = Tensor({3, 3});
    for (std::size_t i = 0; i < 3; ++i) d.w.value(i, i) = 1.0;
    d.b.value = Tensor({3});
    Rng rng(15);
    Tensor x = random_tensor(rng, {1, 2, 2, 3});
    Tape tape;
    const Tensor& out = conv1x1_head(tape, tape.constant(x), d).value();
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("per-cell scoring of a constant feature map gives identical cells") {
    Rng rng(16);
    DenseParams d = DenseParams::he_init(rng, 5, 4);
    Tape tape;
    const Tensor& out =
        conv1x1_head(tape, tape.constant(Tensor::full({1, 3, 3, 4}, 0.7)), d).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t c = 0; c < 5; ++c)
                CHECK(out(std::size_t(0), i, j, c) == out(std::size_t(0), std::size_t(0),
                                                          std::size_t(0), c));
}

TEST_CASE("pooling after per-cell scoring equals scoring after pooling") {
    Rng rng(17);
    for (int draw = 0; draw < 10; ++draw) {
        DenseParams d = DenseParams::he_init(rng, 6, 8);
        Tensor x = random_tensor(rng, {2, 4, 4, 8});
        Tape tape;
        Value in = tape.constant(x);
        const Tensor a = global_avg_pool(conv1x1_head(tape, in, d)).value();
        const Tensor b =
            add_bias(linear(global_avg_pool(in), tape.param(d.w)), tape.param(d.b)).value();
        for (std::size_t i = 0; i < a.numel(); ++i)
            CHECK(std::abs(a[i] - b[i]) < 1e-10);
    }
}

TEST_CASE("head conversion keeps scores identical and shares parameter storage") {
    Rng rng(18);
    Head h;
    h.params = DenseParams::he_init(rng, 5, 12);
    h.form = HeadForm::gap_fc;
    Tensor x = random_tensor(rng, {3, 4, 4, 12});

    Tape tape;
    const Tensor fc = head_scores(tape, tape.constant(x), h).value();
    convert_head(h);
    CHECK(h.form == HeadForm::conv1x1_gap);
    const Tensor conv = head_scores(tape, tape.constant(x), h).value();
    REQUIRE(fc.shape() == conv.shape());
    for (std::size_t i = 0; i < fc.numel(); ++i) CHECK(std::abs(fc[i] - conv[i]) < 1e-10);

    // conversion is a relabeling: flipping back changes no parameters
    const double w00 = h.params.w.value[0];
    convert_head(h);
    CHECK(h.form == HeadForm::gap_fc);
    CHECK(h.params.w.value[0] == w00);
}

TEST_CASE("zero-weight heads output the bias in both forms") {
    Head h;
    h.params.w.value = Tensor({4, 6});
    h.params.b.value = Tensor::from({4}, {1.0, -1.0, 2.0, 0.25});
    Rng rng(19);
    Tensor x = random_tensor(rng, {2, 3, 3, 6});
    for (HeadForm form : {HeadForm::gap_fc, HeadForm::conv1x1_gap}) {
        h.form = form;
        Tape tape;
        const Tensor& s = head_scores(tape, tape.constant(x), h).value();
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(s(b, c) == doctest::Approx(h.params.b.value[c]).epsilon(1e-14));
    }
}

TEST_CASE("both head forms agree on the winning class across many draws") {
    Rng rng(20);
    for (int draw = 0; draw < 100; ++draw) {
        Head h;
        h.params = DenseParams::he_init(rng, 7, 9);
        Tensor x = random_tensor(rng, {1, 3, 3, 9});
        auto argmax = [&](HeadForm form) {
            h.form = form;
            Tape tape;
            const Tensor& s = head_scores(tape, tape.constant(x), h).value();
            std::size_t best = 0;
            for (std::size_t c = 1; c < 7; ++c)
                if (s[c] > s[best]) best = c;
            return best;
        };
        CHECK(argmax(HeadForm::gap_fc) == argmax(HeadForm::conv1x1_gap));
    }
}

TEST_CASE("training-mode normalization standardizes each channel") {
    Rng rng(21);
    BNParams p = BNParams::identity_init(3);
    Tensor x = random_tensor(rng, {1, 4, 4, 3}, -3.0, 5.0);
    Tape tape;
    const Tensor& y = batch_norm(tape, tape.constant(x), p, true).value();
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) mean += y(std::size_t(0), i, j, c);
        mean /= 16.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const double d = y(std::size_t(0), i, j, c) - mean;
                var += d * d;
            }
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("inference-mode normalization with unit stats is a near-identity") {
    BNParams p = BNParams::identity_init(2);
    Rng rng(22);
    Tensor x = random_tensor(rng, {3, 2});
    Tape tape;
    const Tensor& y = batch_norm(tape, tape.constant(x), p, false).value();
    const double k = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y[i] == doctest::Approx(x[i] * k).epsilon(1e-12));
}

TEST_CASE("training-mode normalization updates running statistics, inference does not") {
    BNParams p = BNParams::identity_init(2, 0.1);
    Tensor x = Tensor::from({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
    {
        Tape tape;
        batch_norm(tape, tape.constant(x), p, true);
    }
    // batch means 2.5 / 25; running <- 0.9 * 0 + 0.1 * batch
    CHECK(p.running_mean[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.running_mean[1] == doctest::Approx(2.5).epsilon(1e-12));
    const double frozen0 = p.running_mean[0];
    {
        Tape tape;
        batch_norm(tape, tape.constant(x), p, false);
    }
    CHECK(p.running_mean[0] == frozen0);
}

TEST_CASE("training-mode normalization rejects single-sample batches") {
    BNParams p = BNParams::identity_init(2);
    Tape tape;
    Value x = tape.constant(Tensor({1, 2}));
    CHECK_THROWS_AS(batch_norm(tape, x, p, true), ShapeError);
}

TEST_CASE("normalization gradients agree with central differences") {
    Rng rng(23);
    BNParams p = BNParams::identity_init(3);
    p.gamma.value = Tensor::from({3}, {1.2, 0.8, 1.5});
    p.beta.value = Tensor::from({3}, {0.1, -0.2, 0.4});
    Tensor x = random_tensor(rng, {4, 3});
    auto f = [&](Tape& tape, Value in) {
        auto out = batch_norm_train(in, tape.param(p.gamma), tape.param(p.beta), double(p.eps));
        return sum(mul(out.y, out.y));
    };
    CHECK(finite_diff_check<double>(f, x, 1e-5) < 1e-4);
}

TEST_CASE("parameter initialization is deterministic per seed") {
    Rng a(77), b(77), c(78);
    ConvParams pa = ConvParams::he_init(a, 3, 3, 4, 8, 1, 1);
    ConvParams pb = ConvParams::he_init(b, 3, 3, 4, 8, 1, 1);
    ConvParams pc = ConvParams::he_init(c, 3, 3, 4, 8, 1, 1);
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < pa.w.value.numel(); ++i) {
        all_equal = all_equal && pa.w.value[i] == pb.w.value[i];
        any_diff = any_diff || pa.w.value[i] != pc.w.value[i];
    }
    CHECK(all_equal);
    CHECK(any_diff);
}
