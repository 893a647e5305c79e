// Tensor container, tape-based reverse-mode differentiation, primitive ops,
// the finite-difference harness, and the on-disk tensor/CSV formats.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "fosnet/grad_check.hpp"
#include "fosnet/ops.hpp"
#include "fosnet/rng.hpp"
#include "fosnet/serialize.hpp"

using namespace fosnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path dir = fs::temp_directory_path() / (std::string("fosnet_test_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping and element access") {
    Tensor t({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.extent(1) == 3);
    t(1, 2) = 7.0;
    CHECK(t[5] == 7.0);
    CHECK(Tensor::scalar(4.0).numel() == 1);
    CHECK(Tensor::ones({2, 2})[3] == 1.0);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("tensor cast converts precision both ways") {
    Tensor t = Tensor::from({3}, {1.5, -2.0, 0.25});
    TensorF f = t.cast<float>();
    Tensor back = f.cast<double>();
    for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("ensure_finite rejects NaN and infinity") {
    Tensor t = Tensor::from({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(ensure_finite(t, "probe"), NumericError);
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(ensure_finite(t, "probe"), NumericError);
    t[1] = 0.0;
    CHECK_NOTHROW(ensure_finite(t, "probe"));
}

TEST_CASE("elementwise multiply matches hand result") {
    Tape tape;
    Value a = tape.constant(Tensor::from({3}, {1, 2, 3}));
    Value b = tape.constant(Tensor::from({3}, {4, 5, 6}));
    const Tensor& out = mul(a, b).value();
    CHECK(out[0] == 4.0);
    CHECK(out[1] == 10.0);
    CHECK(out[2] == 18.0);
}

TEST_CASE("sigmoid of zero is one half") {
    Tape tape;
    Value y = sigmoid(tape.constant(Tensor::scalar(0.0)));
    CHECK(y.value()[0] == 0.5);
}

TEST_CASE("matmul by the identity returns the input") {
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
    Rng rng(11);
    Tensor v = random_tensor(rng, {3, 1});
    Tape tape;
    const Tensor& out = matmul(tape.constant(eye), tape.constant(v)).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-15));
}

TEST_CASE("mismatched elementwise shapes raise an error naming the op") {
    Tape tape;
    Value a = tape.constant(Tensor({2}));
    Value b = tape.constant(Tensor({3}));
    CHECK_THROWS_WITH_AS(mul(a, b), doctest::Contains("mul"), ShapeError);
}

TEST_CASE("gradient of sum of squares is twice the input") {
    Tape tape;
    Value x = tape.leaf(Tensor::from({3}, {1, 2, 3}), true);
    tape.backward(sum(mul(x, x)));
    const Tensor& g = x.grad();
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
    CHECK(g[2] == 6.0);
}

TEST_CASE("gradient of sigmoid at zero is one quarter") {
    Tape tape;
    Value x = tape.leaf(Tensor::scalar(0.0), true);
    tape.backward(sum(sigmoid(x)));
    CHECK(x.grad()[0] == 0.25);
}

TEST_CASE("matmul chain gradient agrees with central differences") {
    Rng rng(7);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    auto f = [&](Tape& tape, Value in) {
        Value m = matmul(in, tape.constant(b));
        return sum(mul(m, m));
    };
    CHECK(finite_diff_check<double>(f, a, 1e-5) < 1e-6);
}

TEST_CASE("backward rejects non-scalar outputs and empty tapes") {
    Tape tape;
    Value v = tape.leaf(Tensor({2}), true);
    CHECK_THROWS_AS(tape.backward(v), ShapeError);
    Tape empty;
    CHECK_THROWS_AS(empty.backward(Value{&empty, 0}), ShapeError);
}

TEST_CASE("finite differences on a sum of squares are tight") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {6});
    auto f = [](Tape&, Value in) { return sum(mul(in, in)); };
    CHECK(finite_diff_check<double>(f, x, 1e-5) < 1e-8);
}

TEST_CASE("finite differences on a constant function report zero error") {
    Tensor x = Tensor::from({3}, {1, 2, 3});
    auto f = [](Tape& tape, Value) { return tape.constant(Tensor::scalar(5.0)); };
    CHECK(finite_diff_check<double>(f, x, 1e-5) == 0.0);
}

TEST_CASE("finite differences through the coherence-plus-head composite") {
    Rng rng(19);
    Tensor grid = random_tensor(rng, {3, 4, 5});
    Tensor w = random_tensor(rng, {5, 5}, -0.5, 0.5);
    auto f = [&](Tape& tape, Value in) {
        Value cells = conv1x1(reshape(in, {1, 3, 4, 5}), tape.constant(w),
                              tape.constant(Tensor({5})));
        return scene_coherence(cells);
    };
    CHECK(finite_diff_check<double>(f, grid, 1e-5) < 1e-4);
}

TEST_CASE("backward is linear in the output combination") {
    Rng rng(23);
    Tensor x0 = random_tensor(rng, {5});
    const double a = 1.7, b = -0.6;
    auto grad_of = [&](auto&& make) {
        Tape tape;
        Value x = tape.leaf(x0, true);
        tape.backward(make(tape, x));
        return x.grad();
    };
    Tensor gf = grad_of([](Tape&, Value x) { return sum(mul(x, x)); });
    Tensor gg = grad_of([](Tape&, Value x) { return sum(sigmoid(x)); });
    Tensor gc = grad_of([&](Tape&, Value x) {
        return add(scale(sum(mul(x, x)), a), scale(sum(sigmoid(x)), b));
    });
    for (std::size_t i = 0; i < x0.numel(); ++i)
        CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-10));
}

TEST_CASE("identical seeds give bit-identical forward and backward passes") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor(rng, {4, 6});
        Tensor w = random_tensor(rng, {3, 6});
        Tape tape;
        Value in = tape.leaf(x, true);
        Value out = sum(sigmoid(linear(in, tape.constant(w))));
        tape.backward(out);
        std::pair<double, Tensor> r{out.value()[0], in.grad()};
        return r;
    };
    auto [y1, g1] = run(99);
    auto [y2, g2] = run(99);
    CHECK(y1 == y2);
    REQUIRE(g1.numel() == g2.numel());
    for (std::size_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("parameter gradients accumulate across backward passes until cleared") {
    ParamT<double> p;
    p.value = Tensor::from({2}, {1.0, 2.0});
    for (int pass = 0; pass < 2; ++pass) {
        Tape tape;
        tape.backward(sum(mul(tape.param(p), tape.param(p))));
    }
    CHECK(p.grad[0] == doctest::Approx(4.0));
    CHECK(p.grad[1] == doctest::Approx(8.0));
    p.zero_grad();
    CHECK_FALSE(p.has_grad());
}

TEST_CASE("tensor file round trip is bit-exact in both precisions") {
    fs::path dir = temp_dir("fost_rt");
    Rng rng(41);
    Tensor t = random_tensor(rng, {2, 3, 4});
    write_fost(dir / "t.fost", t);
    Tensor back = read_fost<double>(dir / "t.fost");
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);

    TensorF tf = t.cast<float>();
    write_fost(dir / "tf.fost", tf);
    TensorF backf = read_fost<float>(dir / "tf.fost");
    for (std::size_t i = 0; i < tf.numel(); ++i) CHECK(backf[i] == tf[i]);
}

TEST_CASE("tensor file header lays out magic, version, rank, extents, dtype") {
    fs::path dir = temp_dir("fost_hdr");
    write_fost(dir / "t.fost", Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5}));
    std::ifstream in(dir / "t.fost", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    // "FOST" + u32 version + u32 rank + 2 x u64 extents + u8 dtype + 6 doubles
    REQUIRE(bytes.size() == 4 + 4 + 4 + 16 + 1 + 48);
    CHECK(bytes[0] == 'F');
    CHECK(bytes[1] == 'O');
    CHECK(bytes[2] == 'S');
    CHECK(bytes[3] == 'T');
    CHECK(bytes[4] == 1);   // version, little-endian u32
    CHECK(bytes[8] == 2);   // rank
    CHECK(bytes[12] == 2);  // extent 0
    CHECK(bytes[20] == 3);  // extent 1
    CHECK(bytes[28] == 0);  // dtype f64
}

TEST_CASE("tensor file loading converts between stored and requested precision") {
    fs::path dir = temp_dir("fost_conv");
    Tensor t = Tensor::from({3}, {1.25, -0.5, 3.0});
    write_fost(dir / "t.fost", t);
    TensorF asf = read_fost<float>(dir / "t.fost");
    for (std::size_t i = 0; i < 3; ++i) CHECK(asf[i] == float(t[i]));
}

TEST_CASE("corrupt magic bytes fail with the file named") {
    fs::path dir = temp_dir("fost_bad");
    fs::path p = dir / "broken.fost";
    std::ofstream(p, std::ios::binary) << "JUNKJUNKJUNK";
    CHECK_THROWS_WITH_AS(read_fost<double>(p), doctest::Contains("broken.fost"), IoError);
}

TEST_CASE("truncated tensor files are rejected") {
    fs::path dir = temp_dir("fost_trunc");
    write_fost(dir / "t.fost", Tensor::from({4}, {1, 2, 3, 4}));
    auto size = fs::file_size(dir / "t.fost");
    fs::resize_file(dir / "t.fost", size - 8);
    CHECK_THROWS_AS(read_fost<double>(dir / "t.fost"), IoError);
}

TEST_CASE("unknown format versions are rejected") {
    fs::path dir = temp_dir("fost_ver");
    write_fost(dir / "t.fost", Tensor::scalar(1.0));
    std::fstream f(dir / "t.fost", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t bad = 99;
    f.write(reinterpret_cast<const char*>(&bad), 4);
    f.close();
    CHECK_THROWS_AS(read_fost<double>(dir / "t.fost"), IoError);
}

TEST_CASE("named tensor bundles round trip with their manifest") {
    fs::path dir = temp_dir("bundle");
    Rng rng(4);
    Tensor a = random_tensor(rng, {2, 2});
    Tensor b = random_tensor(rng, {3});
    nlohmann::json meta{{"note", "probe"}};
    save_tensors<double>(dir, {{"layer.w", &a}, {"layer.b", &b}}, meta);
    auto loaded = load_tensors<double>(dir);
    REQUIRE(loaded.tensors.count("layer.w") == 1);
    REQUIRE(loaded.tensors.count("layer.b") == 1);
    CHECK(loaded.meta["note"] == "probe");
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(loaded.tensors["layer.w"][i] == a[i]);
    for (std::size_t i = 0; i < b.numel(); ++i) CHECK(loaded.tensors["layer.b"][i] == b[i]);
}

TEST_CASE("grayscale image files quantize to 255 levels and parse back") {
    fs::path dir = temp_dir("pgm");
    Tensor plane = Tensor::from({2, 2}, {0.0, 0.5, 1.0, 0.25});
    write_pgm(dir / "p.pgm", plane);
    Tensor back = parse_pgm<double>(dir / "p.pgm");
    REQUIRE(back.shape() == plane.shape());
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(back[i] == doctest::Approx(plane[i]).epsilon(1.0 / 255.0));
}

TEST_CASE("seventeen-digit float formatting reparses exactly") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        double v = rng.normal(0, 1e3) * std::pow(10.0, rng.uniform_int(-8, 8));
        CHECK(std::stod(format_g17(v)) == v);
    }
    CHECK(std::stod(format_g17(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("csv writer enforces its column count") {
    fs::path dir = temp_dir("csv");
    CsvWriter w(dir / "log.csv", {"a", "b"});
    CHECK_NOTHROW(w.row({"1", "2"}));
    CHECK_THROWS_AS(w.row({"1", "2", "3"}), IoError);
}
