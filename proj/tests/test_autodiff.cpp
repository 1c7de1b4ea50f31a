#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "glyph/autodiff.hpp"
#include "glyph/error.hpp"
#include "glyph/rng.hpp"
#include "util/test_helpers.hpp"

using namespace glyph;
using namespace glyph::ad;
using testutil::error_code_of;

namespace {

Parameter<double> randn_param(const std::string& name, Shape shape, uint64_t seed,
                              double scale = 1.0, double offset = 0.0) {
    Parameter<double> p(name, std::move(shape));
    rng::SplitMix64 rng(seed);
    for (double& v : p.value) v = rng.normal() * scale + offset;
    return p;
}

std::vector<double> randn_vec(size_t n, uint64_t seed, double scale = 1.0) {
    std::vector<double> out(n);
    rng::SplitMix64 rng(seed);
    for (double& v : out) v = rng.normal() * scale;
    return out;
}

/// loss = sum(op_output * fixed_random_weights); isolates one op per check.
double op_grad_error(std::vector<Parameter<double>*> params,
                     const std::function<Tensor<double>(Tape<double>&)>& op_builder) {
    LossBuilder builder = [&](Tape<double>& tape) {
        Tensor<double> out = op_builder(tape);
        Tensor<double> weights = tape.constant(
            out.shape(), randn_vec(static_cast<size_t>(out.size()), 99));
        return tape.reduce_sum(tape.mul(out, weights));
    };
    return grad_check(builder, params, 1e-5);
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("forward op values match closed forms") {
    Tape<double> tape;
    // softmax of a uniform row is uniform
    Tensor<double> sm = tape.softmax(tape.constant({1, 2}, {0.0, 0.0}));
    CHECK(sm.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sm.value()[1] == doctest::Approx(0.5).epsilon(1e-12));

    // layer_norm of a constant vector is zero pre-affine (gamma=1, beta=0)
    Tensor<double> gamma = tape.constant({4}, {1, 1, 1, 1});
    Tensor<double> beta = tape.constant({4}, {0, 0, 0, 0});
    Tensor<double> ln =
        tape.layer_norm(tape.constant({1, 4}, {3.5, 3.5, 3.5, 3.5}), gamma, beta);
    for (double v : ln.value()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    // gelu at a few reference points (exact erf formulation)
    Tensor<double> g = tape.gelu(tape.constant({3}, {0.0, 1.0, -1.0}));
    CHECK(g.value()[0] == doctest::Approx(0.0));
    CHECK(g.value()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(g.value()[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));

    CHECK(error_code_of([&] {
              Tape<double> t2;
              t2.matmul(t2.constant({2, 3}, std::vector<double>(6, 1.0)),
                        t2.constant({4, 2}, std::vector<double>(8, 1.0)));
          }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("backward on linear and quadratic forms") {
    // loss = sum(w * x), x constant -> grad(w) = x
    Parameter<double> w("w", {4});
    w.value = {1.0, -2.0, 0.5, 3.0};
    const std::vector<double> x = {2.0, 0.25, -1.0, 4.0};
    {
        Tape<double> tape;
        Tensor<double> loss =
            tape.reduce_sum(tape.mul(tape.leaf(w), tape.constant({4}, x)));
        w.zero_grad();
        tape.backward(loss);
        for (int i = 0; i < 4; ++i) CHECK(w.grad[i] == doctest::Approx(x[i]));
    }
    // loss = |w|^2 -> grad = 2w
    {
        Tape<double> tape;
        Tensor<double> norm = tape.l2_norm(tape.leaf(w));
        Tensor<double> loss = tape.mul(norm, norm);
        w.zero_grad();
        tape.backward(loss);
        for (int i = 0; i < 4; ++i) {
            CHECK(w.grad[i] == doctest::Approx(2.0 * w.value[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("backward requires a scalar loss") {
    Parameter<double> w("w", {2});
    Tape<double> tape;
    Tensor<double> y = tape.scale(tape.leaf(w), 2.0);
    CHECK(error_code_of([&] { tape.backward(y); }) == ErrorCode::NonScalarLoss);
}

TEST_CASE("gradient accumulation over repeated consumers") {
    // w appears in two branches: grad = x1 + x2.
    Parameter<double> w = randn_param("w", {5}, 11);
    const std::vector<double> x1 = randn_vec(5, 12), x2 = randn_vec(5, 13);
    Tape<double> tape;
    Tensor<double> lw = tape.leaf(w);
    Tensor<double> loss =
        tape.add(tape.reduce_sum(tape.mul(lw, tape.constant({5}, x1))),
                 tape.reduce_sum(tape.mul(lw, tape.constant({5}, x2))));
    w.zero_grad();
    tape.backward(loss);
    for (int i = 0; i < 5; ++i) {
        CHECK(w.grad[i] == doctest::Approx(x1[i] + x2[i]).epsilon(1e-12));
    }

    // Same node used as both operands of mul: d(w*w) = 2w.
    Parameter<double> u = randn_param("u", {3}, 14);
    Tape<double> tape2;
    Tensor<double> lu = tape2.leaf(u);
    Tensor<double> loss2 = tape2.reduce_sum(tape2.mul(lu, lu));
    u.zero_grad();
    tape2.backward(loss2);
    for (int i = 0; i < 3; ++i) {
        CHECK(u.grad[i] == doctest::Approx(2.0 * u.value[i]).epsilon(1e-12));
    }
}

TEST_CASE("per-op gradients match central differences") {
    SUBCASE("matmul") {
        Parameter<double> a = randn_param("a", {3, 4}, 1);
        Parameter<double> b = randn_param("b", {4, 2}, 2);
        CHECK(op_grad_error({&a, &b}, [&](Tape<double>& t) {
                  return t.matmul(t.leaf(a), t.leaf(b));
              }) < kTol);
    }
    SUBCASE("transpose") {
        Parameter<double> a = randn_param("a", {3, 4}, 3);
        CHECK(op_grad_error({&a}, [&](Tape<double>& t) {
                  return t.transpose(t.leaf(a));
              }) < kTol);
    }
    SUBCASE("add sub mul") {
        Parameter<double> a = randn_param("a", {2, 3}, 4);
        Parameter<double> b = randn_param("b", {2, 3}, 5);
        CHECK(op_grad_error({&a, &b}, [&](Tape<double>& t) {
                  return t.mul(t.add(t.leaf(a), t.leaf(b)), t.sub(t.leaf(a), t.leaf(b)));
              }) < kTol);
    }
    SUBCASE("div") {
        Parameter<double> a = randn_param("a", {6}, 6);
        Parameter<double> b = randn_param("b", {6}, 7, 0.2, 2.0);  // bounded away from 0
        CHECK(op_grad_error({&a, &b}, [&](Tape<double>& t) {
                  return t.div(t.leaf(a), t.leaf(b));
              }) < kTol);
    }
    SUBCASE("maximum") {
        Parameter<double> a = randn_param("a", {8}, 8);
        Parameter<double> b("b", {8});
        for (size_t i = 0; i < 8; ++i) b.value[i] = a.value[i] + ((i % 2) ? 0.5 : -0.5);
        CHECK(op_grad_error({&a, &b}, [&](Tape<double>& t) {
                  return t.maximum(t.leaf(a), t.leaf(b));
              }) < kTol);
    }
    SUBCASE("affine and mul_scalar") {
        Parameter<double> a = randn_param("a", {5}, 9);
        Parameter<double> s = randn_param("s", {1}, 10, 0.3, 1.5);
        CHECK(op_grad_error({&a, &s}, [&](Tape<double>& t) {
                  return t.mul_scalar(t.affine(t.leaf(a), 1.7, -0.3), t.leaf(s));
              }) < kTol);
    }
    SUBCASE("abs") {
        Parameter<double> a("a", {6});
        a.value = {1.0, -2.0, 0.7, -0.4, 3.0, -1.1};  // away from the kink
        CHECK(op_grad_error({&a}, [&](Tape<double>& t) { return t.abs(t.leaf(a)); }) <
              kTol);
    }
    SUBCASE("log") {
        Parameter<double> a = randn_param("a", {6}, 15, 0.1, 2.0);
        CHECK(op_grad_error({&a}, [&](Tape<double>& t) { return t.log(t.leaf(a)); }) <
              kTol);
    }
    SUBCASE("acosh") {
        Parameter<double> a = randn_param("a", {5}, 16, 0.2, 2.5);  // args > 1.5
        CHECK(op_grad_error({&a}, [&](Tape<double>& t) { return t.acosh(t.leaf(a)); }) <
              kTol);
    }
    SUBCASE("gelu") {
        Parameter<double> a = randn_param("a", {7}, 17);
        CHECK(op_grad_error({&a}, [&](Tape<double>& t) { return t.gelu(t.leaf(a)); }) <
              kTol);
    }
    SUBCASE("softmax") {
        Parameter<double> a = randn_param("a", {3, 5}, 18);
        CHECK(op_grad_error({&a}, [&](Tape<double>& t) { return t.softmax(t.leaf(a)); }) <
              kTol);
    }
    SUBCASE("layer_norm") {
        Parameter<double> x = randn_param("x", {3, 6}, 19);
        Parameter<double> gamma = randn_param("g", {6}, 20, 0.3, 1.0);
        Parameter<double> beta = randn_param("b", {6}, 21, 0.2);
        CHECK(op_grad_error({&x, &gamma, &beta}, [&](Tape<double>& t) {
                  return t.layer_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta));
              }) < kTol);
    }
    SUBCASE("embedding_lookup") {
        Parameter<double> table = randn_param("table", {7, 4}, 22);
        const std::vector<int32_t> ids = {3, 0, 6, 3};  // repeated row accumulates
        CHECK(op_grad_error({&table}, [&](Tape<double>& t) {
                  return t.embedding_lookup(t.leaf(table), ids);
              }) < kTol);
    }
    SUBCASE("add_bias") {
        Parameter<double> x = randn_param("x", {3, 4}, 23);
        Parameter<double> b = randn_param("b", {4}, 24);
        CHECK(op_grad_error({&x, &b}, [&](Tape<double>& t) {
                  return t.add_bias(t.leaf(x), t.leaf(b));
              }) < kTol);
    }
    SUBCASE("slices reshape concat") {
        Parameter<double> x = randn_param("x", {4, 6}, 25);
        CHECK(op_grad_error({&x}, [&](Tape<double>& t) {
                  Tensor<double> lx = t.leaf(x);
                  Tensor<double> top = t.slice_rows(lx, 0, 2);
                  Tensor<double> left = t.slice_cols(lx, 0, 3);
                  Tensor<double> joined = t.concat_cols(
                      {t.reshape(top, {4, 3}), t.slice_rows(left, 0, 4)});
                  return t.concat_rows({joined, joined});
              }) < kTol);
    }
    SUBCASE("reductions and norms") {
        Parameter<double> x = randn_param("x", {3, 4}, 26);
        CHECK(op_grad_error({&x}, [&](Tape<double>& t) {
                  Tensor<double> lx = t.leaf(x);
                  return t.add(t.add(t.reduce_sum(lx), t.reduce_mean(lx)),
                               t.l2_norm(lx));
              }) < kTol);
    }
    SUBCASE("normalize_rows") {
        Parameter<double> x = randn_param("x", {4, 5}, 27, 1.0, 0.5);
        CHECK(op_grad_error({&x}, [&](Tape<double>& t) {
                  return t.normalize_rows(t.leaf(x));
              }) < kTol);
    }
}

TEST_CASE("identical seeds give bitwise-identical values and gradients") {
    auto run = [](std::vector<double>* grads) {
        Parameter<double> a = randn_param("a", {4, 4}, 31);
        Parameter<double> b = randn_param("b", {4, 4}, 32);
        Tape<double> tape;
        Tensor<double> y = tape.softmax(tape.matmul(tape.leaf(a), tape.leaf(b)));
        Tensor<double> loss = tape.reduce_mean(tape.gelu(y));
        tape.backward(loss);
        *grads = a.grad;
        return loss.item();
    };
    std::vector<double> g1, g2;
    const double l1 = run(&g1);
    const double l2 = run(&g2);
    CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
    REQUIRE(g1.size() == g2.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("adamw single-step hand example") {
    // w=1, g=1, fresh state, lr=0.1, decay=0: bias-corrected mhat=1, vhat=1,
    // update = 0.1/(1+1e-8), so w' is 0.9 to ~1e-9.
    Parameter<float> w("w", {1});
    w.value[0] = 1.0f;
    w.grad[0] = 1.0f;
    AdamWConfig config;
    config.weight_decay = 0.0;
    AdamWState<float> opt({&w}, config);
    opt.step({&w}, 0.1);
    CHECK(opt.step_count() == 1);
    CHECK(w.value[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw zero gradient and zero decay leaves parameters unchanged") {
    Parameter<float> w("w", {3});
    w.value = {0.5f, -1.5f, 2.0f};
    w.zero_grad();
    AdamWConfig config;
    config.weight_decay = 0.0;
    AdamWState<float> opt({&w}, config);
    const std::vector<float> before = w.value;
    opt.step({&w}, 0.1);
    opt.step({&w}, 0.1);
    CHECK(w.value == before);
}

TEST_CASE("adamw second moments follow the EMA of squared gradients") {
    Parameter<double> w("w", {1});
    w.value[0] = 1.0;
    AdamWConfig config;
    config.weight_decay = 0.0;
    AdamWState<double> opt({&w}, config);
    w.grad[0] = 1.0;
    opt.step({&w}, 0.01);
    w.grad[0] = 1.0;
    opt.step({&w}, 0.01);
    CHECK(opt.step_count() == 2);
    // m2 = 0.9*0.1 + 0.1 = 0.19; v2 = 0.999*0.001 + 0.001 = 0.001999
    CHECK(opt.first_moment(0)[0] == doctest::Approx(0.19).epsilon(1e-12));
    CHECK(opt.second_moment(0)[0] == doctest::Approx(0.001999).epsilon(1e-12));
}

TEST_CASE("grad_check closed-form examples") {
    // f(w) = w^2 at w=3: derivative 6, quadratic so cd is exact.
    Parameter<double> w("w", {1});
    w.value[0] = 3.0;
    LossBuilder square = [&](Tape<double>& t) {
        Tensor<double> lw = t.leaf(w);
        return t.mul(lw, lw);
    };
    CHECK(grad_check(square, {&w}, 1e-5) < 1e-8);

    LossBuilder constant = [&](Tape<double>& t) { return t.scalar(42.0); };
    CHECK(grad_check(constant, {&w}, 1e-5) == 0.0);
}
