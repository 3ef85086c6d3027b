#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "laneatt/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace laneatt;
using testsupport::GradCase;
using testsupport::random_values;
using testsupport::run_gradcheck;

TEST_CASE("tensor construction and access") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    t.at2(1, 2) = 5.0;
    CHECK(t.data[5] == 5.0);
    CHECK_THROWS_AS(t.at2(2, 0), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK(Tensor::scalar(4.5).value() == 4.5);
    CHECK(Tensor::full({3}, 2.0).data == std::vector<double>{2.0, 2.0, 2.0});

    Tensor cube({2, 2, 2});
    cube.at3(1, 0, 1) = 7.0;
    CHECK(cube.data[5] == 7.0);
}

TEST_CASE("tape runs backward through a square") {
    Tensor x({1}, {3.0});
    Tape tape;
    tape.watch(x);
    Tensor y = mul(&tape, x, x);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("tape misuse raises structured errors") {
    Tensor x({1}, {2.0});
    Tape tape;
    tape.watch(x);
    Tensor y = mul(&tape, x, x);

    Tensor alien({1}, {1.0});
    CHECK_THROWS_AS(tape.backward(alien), TapeError);
    CHECK_THROWS_AS(tape.grad(x), TapeError);  // before backward

    Tensor vec({2}, {1.0, 2.0});
    Tape tape2;
    tape2.watch(vec);
    Tensor out = relu(&tape2, vec);
    CHECK_THROWS_AS(tape2.backward(out), TapeError);  // non-scalar output

    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), TapeError);  // second backward
    CHECK_THROWS_AS(mul(&tape, x, x), TapeError);  // record after backward
    CHECK_THROWS_AS(tape.grad(alien), TapeError);
}

TEST_CASE("tensors from another tape are constants") {
    Tensor x({2}, {1.0, 2.0});
    Tape first;
    first.watch(x);
    Tensor y = relu(&first, x);

    Tape second;
    Tensor z = relu(&second, y);  // y belongs to `first`
    CHECK(z.node == Tensor::kNoNode);

    Tensor w({2}, {3.0, 4.0});
    second.watch(w);
    Tensor s = sum_all(&second, mul(&second, y, w));
    second.backward(s);
    const auto& gw = second.grad(w);
    CHECK(gw[0] == doctest::Approx(1.0));
    CHECK(gw[1] == doctest::Approx(2.0));
    CHECK_THROWS_AS(second.grad(y), TapeError);
}

TEST_CASE("dense matches hand-computed values") {
    Tensor x({2}, {1.0, 1.0});
    Tensor w({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor b({2}, {0.0, 0.0});
    Tensor out = dense(nullptr, x, w, b);
    CHECK(out.data[0] == 3.0);
    CHECK(out.data[1] == 7.0);

    Tensor b2({2}, {0.5, -0.5});
    Tensor out2 = dense(nullptr, x, w, b2);
    CHECK(out2.data[0] == 3.5);
    CHECK(out2.data[1] == 6.5);
}

TEST_CASE("softmax frozen values and properties") {
    Tensor x({2}, {0.0, std::log(3.0)});
    Tensor y = softmax(nullptr, x);
    CHECK(y.data[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.data[1] == doctest::Approx(0.75).epsilon(1e-12));

    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Tensor v({7}, random_values(7, seed));
        for (auto& e : v.data) e *= 50.0;  // stress the max-subtraction
        Tensor s = softmax(nullptr, v);
        double total = 0.0;
        for (double e : s.data) {
            CHECK(e > 0.0);
            total += e;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

        Tensor shifted = v;
        for (auto& e : shifted.data) e += 123.0;
        Tensor s2 = softmax(nullptr, shifted);
        for (int i = 0; i < 7; ++i) {
            CHECK(s.data[static_cast<std::size_t>(i)] ==
                  doctest::Approx(s2.data[static_cast<std::size_t>(i)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax gradients vanish under sum") {
    // sum(softmax(x)) == 1 for every x, so the gradient must be ~0.
    Tensor x({5}, random_values(5, 42));
    Tape tape;
    tape.watch(x);
    Tensor loss = sum_all(&tape, softmax(&tape, x));
    tape.backward(loss);
    for (double g : tape.grad(x)) CHECK(std::abs(g) <= 1e-12);
}

TEST_CASE("conv2d with an identity kernel reproduces the input exactly") {
    Tensor input({3, 6, 7}, random_values(3 * 6 * 7, 99));
    Tensor kernel({3, 3, 3, 3});
    for (int c = 0; c < 3; ++c) kernel.data[(static_cast<std::size_t>(c) * 3 + c) * 9 + 4] = 1.0;
    Tensor out = conv2d(nullptr, input, kernel, 1, 1);
    REQUIRE(out.shape == input.shape);
    for (int i = 0; i < input.size(); ++i) {
        CHECK(out.data[static_cast<std::size_t>(i)] == input.data[static_cast<std::size_t>(i)]);
    }
}

namespace {

/// Independent multiply count for a padded convolution: walk the same loop
/// nest an explicit-zero-padding implementation would execute.
std::uint64_t conv_mac_oracle(int cin, int h, int w, int cout, int kh, int kw, int stride,
                              int padding) {
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    std::uint64_t count = 0;
    for (int oc = 0; oc < cout; ++oc)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                for (int ic = 0; ic < cin; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) count += 1;
    return count;
}

}  // namespace

TEST_CASE("multiply-accumulate accounting") {
    reset_mac_counter();
    CHECK(mac_total() == 0);

    Tensor x({3}, {1.0, 2.0, 3.0});
    Tensor w({2, 3}, random_values(6, 7));
    Tensor b({2}, {0.0, 0.0});
    dense(nullptr, x, w, b);
    CHECK(mac_total() == 6);

    reset_mac_counter();
    Tensor fm({512, 12, 20}, std::vector<double>(512 * 12 * 20, 0.0));
    Tensor k({64, 512, 1, 1}, std::vector<double>(64 * 512, 0.0));
    conv2d(nullptr, fm, k, 1, 0);
    CHECK(mac_total() == 7864320);
    CHECK(mac_total() == conv_mac_oracle(512, 12, 20, 64, 1, 1, 1, 0));

    reset_mac_counter();
    Tensor img({2, 9, 11}, std::vector<double>(2 * 9 * 11, 0.0));
    Tensor k2({3, 2, 3, 3}, std::vector<double>(3 * 2 * 9, 0.0));
    conv2d(nullptr, img, k2, 2, 1);
    CHECK(mac_total() == conv_mac_oracle(2, 9, 11, 3, 3, 3, 2, 1));

    reset_mac_counter();
    Tensor rows({4, 3}, std::vector<double>(12, 0.0));
    linear_rows(nullptr, rows, w, b);
    CHECK(mac_total() == 4 * 2 * 3);

    // matmul and elementwise ops are not counted
    reset_mac_counter();
    matmul(nullptr, Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 2}, {5, 6, 7, 8}));
    relu(nullptr, x);
    CHECK(mac_total() == 0);
}

TEST_CASE("gradcheck: conv2d") {
    run_gradcheck({{Tensor({2, 4, 5}, random_values(40, 1)), Tensor({3, 2, 3, 3}, random_values(54, 2))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return conv2d(t, in[0], in[1], 2, 1); }});
}

TEST_CASE("gradcheck: dense and linear_rows") {
    run_gradcheck({{Tensor({4}, random_values(4, 3)), Tensor({3, 4}, random_values(12, 4)),
                    Tensor({3}, random_values(3, 5))},
                   {0, 1, 2},
                   [](Tape* t, std::vector<Tensor>& in) { return dense(t, in[0], in[1], in[2]); }});
    run_gradcheck({{Tensor({3, 4}, random_values(12, 6)), Tensor({2, 4}, random_values(8, 7)),
                    Tensor({2}, random_values(2, 8))},
                   {0, 1, 2},
                   [](Tape* t, std::vector<Tensor>& in) { return linear_rows(t, in[0], in[1], in[2]); }});
}

TEST_CASE("gradcheck: matmul") {
    run_gradcheck({{Tensor({2, 3}, random_values(6, 9)), Tensor({3, 2}, random_values(6, 10))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return matmul(t, in[0], in[1]); }});
}

TEST_CASE("gradcheck: softmax variants") {
    run_gradcheck({{Tensor({5}, random_values(5, 11))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return softmax(t, in[0]); }});
    run_gradcheck({{Tensor({3, 4}, random_values(12, 12))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return softmax_rows(t, in[0]); }});
}

TEST_CASE("gradcheck: elementwise") {
    auto away_from_zero = [](std::vector<double> v) {
        for (auto& e : v) e += e < 0.0 ? -0.25 : 0.25;
        return v;
    };
    run_gradcheck({{Tensor({6}, away_from_zero(random_values(6, 13)))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return relu(t, in[0]); }});
    run_gradcheck({{Tensor({4}, random_values(4, 14)), Tensor({4}, random_values(4, 15))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return add(t, in[0], in[1]); }});
    run_gradcheck({{Tensor({4}, random_values(4, 16)), Tensor({4}, random_values(4, 17))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return sub(t, in[0], in[1]); }});
    run_gradcheck({{Tensor({4}, random_values(4, 18)), Tensor({4}, random_values(4, 19))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return mul(t, in[0], in[1]); }});
    run_gradcheck({{Tensor({4}, random_values(4, 20))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return scale(t, in[0], -2.5); }});
    run_gradcheck({{Tensor({4}, random_values(4, 21))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return sub_from_scalar(t, 1.0, in[0]); }});

    auto positive = [](std::vector<double> v) {
        for (auto& e : v) e = 0.5 + 0.4 * e;  // (0.1, 0.9)
        return v;
    };
    run_gradcheck({{Tensor({4}, positive(random_values(4, 22)))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return log_op(t, in[0]); }});
    run_gradcheck({{Tensor({4}, positive(random_values(4, 23)))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return pow_scalar(t, in[0], 2.0); }});
    run_gradcheck({{Tensor({4}, positive(random_values(4, 24)))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return pow_scalar(t, in[0], 0.5); }});
    run_gradcheck({{Tensor({4}, away_from_zero(random_values(4, 25)))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return clamp_min(t, in[0], 0.0); }});
}

TEST_CASE("pow_scalar with exponent zero is constant one") {
    Tensor x({3}, {0.2, 0.5, 0.9});
    Tape tape;
    tape.watch(x);
    Tensor y = pow_scalar(&tape, x, 0.0);
    for (double v : y.data) CHECK(v == 1.0);
    tape.backward(sum_all(&tape, y));
    for (double g : tape.grad(x)) CHECK(g == 0.0);
}

TEST_CASE("gradcheck: shape ops") {
    run_gradcheck({{Tensor({2, 3, 2}, random_values(12, 26)), Tensor({2}, random_values(2, 27))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return add_channel_bias(t, in[0], in[1]); }});
    run_gradcheck({{Tensor({5}, random_values(5, 28))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return sum_all(t, in[0]); }});
    run_gradcheck({{Tensor({6}, random_values(6, 29))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return slice(t, in[0], 1, 3); }});
    run_gradcheck({{Tensor({3}, random_values(3, 30)), Tensor({4}, random_values(4, 31))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return concat(t, in[0], in[1]); }});
    run_gradcheck({{Tensor({2, 2}, random_values(4, 32)), Tensor({2, 3}, random_values(6, 33))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) { return concat_cols(t, in[0], in[1]); }});
    run_gradcheck({{Tensor({3, 2}, random_values(6, 34))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) {
                       return select_rows(t, in[0], {1, 0, 1});  // repeated row
                   }});
    run_gradcheck({{Tensor({2, 3}, random_values(6, 35)), Tensor({2, 3}, random_values(6, 36))},
                   {0, 1},
                   [](Tape* t, std::vector<Tensor>& in) {
                       return merge_rows(t, {&in[0], &in[1]}, {{0, 2}, {3, 1}}, 4);
                   }});
    run_gradcheck({{Tensor({4, 3}, random_values(12, 37))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return attention_scatter(t, in[0]); }});
    run_gradcheck({{Tensor({2, 6}, random_values(12, 39))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return reshape(t, in[0], {3, 4}); }});
    run_gradcheck({{Tensor({3, 4}, random_values(12, 40))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return take_per_row(t, in[0], {2, 0, 3}); }});
    run_gradcheck({{Tensor({2, 4, 5}, random_values(40, 41))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) {
                       return pool_gather_rows(t, in[0], {{1, 4, -1, 7}, {0, 0, 2, 3}});
                   }});
    run_gradcheck({{Tensor({2, 4, 5}, random_values(40, 38))},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) {
                       return pool_gather(t, in[0], {1, 4, -1, 7});  // two off-map columns
                   }});
}

TEST_CASE("gradcheck: smooth l1 mean on both branches") {
    Tensor pred({4}, {0.0, 1.0, 2.0, -3.0});
    Tensor target({4}, {0.3, 0.6, 4.5, -0.5});  // |d| = .3, .4, 2.5, 2.5
    run_gradcheck({{pred, target},
                   {0},
                   [](Tape* t, std::vector<Tensor>& in) { return smooth_l1_mean(t, in[0], in[1]); }});
}

TEST_CASE("pool_gather_rows stacks per-anchor pools") {
    Tensor fm({2, 4, 5}, random_values(40, 77));
    const std::vector<std::vector<int>> col_sets = {{1, 4, -1, 7}, {0, 0, 2, 3}};
    Tensor batched = pool_gather_rows(nullptr, fm, col_sets);
    REQUIRE(batched.shape == Shape{2, 8});
    for (int r = 0; r < 2; ++r) {
        Tensor single = pool_gather(nullptr, fm, col_sets[static_cast<std::size_t>(r)]);
        for (int i = 0; i < 8; ++i) {
            CHECK(batched.at2(r, i) == single.data[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("attention_scatter layout") {
    Tensor s({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor w = attention_scatter(nullptr, s);
    CHECK(w.shape == Shape{3, 3});
    // row 0: diag, then the two scores
    CHECK(w.data == std::vector<double>{0, 1, 2, 3, 0, 4, 5, 6, 0});
}

TEST_CASE("pool_gather reads rows bottom-up and zero-fills off-map columns") {
    Tensor fm({2, 3, 4});
    for (int i = 0; i < fm.size(); ++i) fm.data[static_cast<std::size_t>(i)] = i + 1;
    Tensor out = pool_gather(nullptr, fm, {0, 3, -2});
    REQUIRE(out.shape == Shape{6});
    // grid row 0 reads tensor row 2 (bottom), channel-major within the slot
    CHECK(out.data[0] == fm.at3(0, 2, 0));
    CHECK(out.data[1] == fm.at3(1, 2, 0));
    CHECK(out.data[2] == fm.at3(0, 1, 3));
    CHECK(out.data[3] == fm.at3(1, 1, 3));
    CHECK(out.data[4] == 0.0);
    CHECK(out.data[5] == 0.0);
}

TEST_CASE("shape errors carry op context") {
    Tensor a({2}), b({3});
    CHECK_THROWS_WITH_AS(add(nullptr, a, b), doctest::Contains("add"), ShapeError);
    CHECK_THROWS_AS(conv2d(nullptr, Tensor({2, 2}), Tensor({1, 2, 3, 3}), 1, 0), ShapeError);
    CHECK_THROWS_AS(dense(nullptr, Tensor({3}), Tensor({2, 4}), Tensor({2})), ShapeError);
    CHECK_THROWS_AS(slice(nullptr, Tensor({4}), 2, 3), ShapeError);
    CHECK_THROWS_AS(merge_rows(nullptr, {}, {}, 2), ShapeError);
    Tensor part({2, 2});
    CHECK_THROWS_AS(merge_rows(nullptr, {&part}, {{0, 0}}, 2), ShapeError);  // double cover
}
