#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fd_check.hpp"
#include "mira/optim.hpp"
#include "mira/tape.hpp"

using namespace mira;
using mira::testing::fd_max_rel_err;
using mira::testing::gaussian_away_from_zero;

TEST_CASE("tensor basics") {
    Tensor t = Tensor::from({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 2);
    CHECK(t.size() == 4);
    CHECK(t.at(1, 0) == 3.0);
    CHECK(t.all_finite());
    CHECK_THROWS_AS(Tensor(0, 3), shape_error);
    t.at(0, 0) = std::nan("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("matmul identity and hand cases") {
    Tape tape;
    Var a = tape.constant(Tensor::identity(2));
    Var b = tape.constant(Tensor::from({{1.0, 2.0}, {3.0, 4.0}}));
    const Tensor& c = tape.value(tape.matmul(a, b));
    CHECK(c == Tensor::from({{1.0, 2.0}, {3.0, 4.0}}));

    Var r = tape.constant(Tensor::from({{1.0, 2.0}}));
    Var col = tape.constant(Tensor::from({{3.0}, {4.0}}));
    CHECK(tape.value(tape.matmul(r, col)).item() == doctest::Approx(11.0).epsilon(1e-15));

    Tensor bad(3, 2);
    Tape t2;
    Var x = t2.constant(Tensor(2, 2));
    Var y = t2.constant(bad);
    CHECK_THROWS_AS(t2.matmul(x, y), shape_error);
}

TEST_CASE("matmul gradient of sum(A*B) wrt A") {
    Parameter a("a", Tensor::full(2, 2, 1.0));
    Parameter b("b", Tensor::from({{2.0, 0.0}, {0.0, 3.0}}));
    auto loss_fn = [&b](Tape& tape, std::vector<Parameter*>& ps) {
        return tape.sum_all(tape.matmul(tape.param(*ps[0]), tape.param(b)));
    };
    std::vector<Parameter*> params{&a};
    {
        a.zero_grad();
        Tape tape;
        tape.backward(loss_fn(tape, params));
        for (int r = 0; r < 2; ++r) {
            CHECK(a.grad.at(r, 0) == doctest::Approx(2.0).epsilon(1e-12));
            CHECK(a.grad.at(r, 1) == doctest::Approx(3.0).epsilon(1e-12));
        }
    }
    CHECK(fd_max_rel_err(params, loss_fn) < 1e-4);
}

TEST_CASE("elementwise examples") {
    Tape tape;
    CHECK(tape.value(tape.relu(tape.constant(Tensor::from({{-1.0, 2.0}})))) ==
          Tensor::from({{0.0, 2.0}}));
    CHECK(tape.value(tape.tanh(tape.constant(Tensor::from({{0.0}})))).item() == 0.0);

    Var s = tape.scale(tape.constant(Tensor::from({{1.5, -2.0}})), 2.0);
    CHECK(tape.value(s) == Tensor::from({{3.0, -4.0}}));

    Var sum = tape.add(tape.constant(Tensor::from({{1.0, 2.0}})),
                       tape.constant(Tensor::from({{10.0, 20.0}})));
    CHECK(tape.value(sum) == Tensor::from({{11.0, 22.0}}));

    Tape t2;
    Var a = t2.constant(Tensor(1, 2));
    Var b = t2.constant(Tensor(2, 1));
    CHECK_THROWS_AS(t2.add(a, b), shape_error);
}

TEST_CASE("tanh derivative at 0.5 matches closed form and finite differences") {
    Parameter x("x", Tensor::from({{0.5}}));
    auto loss_fn = [](Tape& tape, std::vector<Parameter*>& ps) {
        return tape.sum_all(tape.tanh(tape.param(*ps[0])));
    };
    std::vector<Parameter*> params{&x};
    x.zero_grad();
    Tape tape;
    tape.backward(loss_fn(tape, params));
    const double expected = 1.0 - std::tanh(0.5) * std::tanh(0.5);
    CHECK(x.grad.item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(x.grad.item() == doctest::Approx(0.786448).epsilon(1e-5));
    CHECK(fd_max_rel_err(params, loss_fn) < 1e-4);
}

TEST_CASE("softmax examples and stability") {
    Tape tape;
    const Tensor& even = tape.value(tape.softmax_rows(tape.constant(Tensor::from({{0.0, 0.0}}))));
    CHECK(even.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

    const Tensor& thirds =
        tape.value(tape.softmax_rows(tape.constant(Tensor::from({{std::log(2.0), 0.0}}))));
    CHECK(thirds.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(thirds.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const Tensor& extreme =
        tape.value(tape.softmax_rows(tape.constant(Tensor::from({{1000.0, 0.0}}))));
    CHECK(extreme.all_finite());
    CHECK(extreme.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(extreme.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one within 1e-12 for |x| <= 1e3") {
    for (int trial = 0; trial < 100; ++trial) {
        auto rng = make_rng(100, "softmax-sum", trial);
        Tensor x = uniform_tensor(rng, 3, 1 + static_cast<int>(rng() % 8), -1e3, 1e3);
        const Tensor y = kernels::softmax_rows(x);
        for (int r = 0; r < y.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < y.cols(); ++c) s += y.at(r, c);
            CHECK(std::fabs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cross entropy examples") {
    Tape tape;
    Var uniform = tape.cross_entropy(tape.constant(Tensor(1, 4)), {2});
    CHECK(tape.value(uniform).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Var confident = tape.cross_entropy(tape.constant(Tensor::from({{10.0, -10.0}})), {0});
    CHECK(tape.value(confident).item() ==
          doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-5));

    CHECK_THROWS_AS(tape.cross_entropy(tape.constant(Tensor(1, 3)), {3}), contract_error);
    CHECK_THROWS_AS(tape.cross_entropy(tape.constant(Tensor(1, 3)), {-1}), contract_error);
}

TEST_CASE("cross entropy gradient equals softmax minus one-hot") {
    auto rng = make_rng(7, "ce-grad");
    Parameter logits("logits", gaussian_tensor(rng, 3, 5, 1.0));
    const std::vector<int> labels{1, 4, 0};
    auto loss_fn = [&labels](Tape& tape, std::vector<Parameter*>& ps) {
        return tape.cross_entropy(tape.param(*ps[0]), labels);
    };
    std::vector<Parameter*> params{&logits};
    logits.zero_grad();
    Tape tape;
    tape.backward(loss_fn(tape, params));
    const Tensor probs = kernels::softmax_rows(logits.value);
    for (int b = 0; b < 3; ++b) {
        for (int c = 0; c < 5; ++c) {
            const double expected = (probs.at(b, c) - (labels[b] == c ? 1.0 : 0.0)) / 3.0;
            CHECK(logits.grad.at(b, c) == doctest::Approx(expected).epsilon(1e-10));
        }
    }
    CHECK(fd_max_rel_err(params, loss_fn) < 1e-4);
}

TEST_CASE("adamw examples") {
    AdamWConfig cfg;
    SUBCASE("zero gradient and zero decay leave parameters unchanged") {
        cfg.learning_rate = 0.1;
        cfg.weight_decay = 0.0;
        OptimizerState state(1, 1, cfg);
        Tensor p = Tensor::scalar(1.0);
        adamw_step(p, Tensor::scalar(0.0), state);
        CHECK(p.item() == 1.0);
        CHECK(state.step_count == 1);
    }
    SUBCASE("first step moves by roughly the learning rate") {
        cfg.learning_rate = 0.1;
        cfg.weight_decay = 0.0;
        OptimizerState state(1, 1, cfg);
        Tensor p = Tensor::scalar(1.0);
        adamw_step(p, Tensor::scalar(1.0), state);
        // bias-corrected m_hat = v_hat = 1, so the update is lr / (1 + eps)
        CHECK(p.item() == doctest::Approx(0.9).epsilon(1e-7));
    }
    SUBCASE("decoupled decay only") {
        cfg.learning_rate = 1e-3;
        cfg.weight_decay = 1e-3;
        OptimizerState state(1, 1, cfg);
        Tensor p = Tensor::scalar(1.0);
        adamw_step(p, Tensor::scalar(0.0), state);
        CHECK(p.item() == doctest::Approx(1.0 - 1e-6).epsilon(1e-12));
    }
    SUBCASE("non-finite gradient raises") {
        OptimizerState state(1, 1, cfg);
        Tensor p = Tensor::scalar(1.0);
        CHECK_THROWS_AS(adamw_step(p, Tensor::scalar(std::nan("")), state), numeric_error);
    }
    SUBCASE("step count increments per step") {
        OptimizerState state(1, 1, cfg);
        Tensor p = Tensor::scalar(1.0);
        for (int i = 1; i <= 5; ++i) {
            adamw_step(p, Tensor::scalar(0.5), state);
            CHECK(state.step_count == i);
        }
    }
}

TEST_CASE("every primitive op passes central finite differences, 100 seeded trials") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto rng = make_rng(42, "fd-ops", trial);
        const int m = 2 + static_cast<int>(rng() % 7);  // <= 8
        const int n = 2 + static_cast<int>(rng() % 7);
        const int k = 2 + static_cast<int>(rng() % 7);
        Parameter a("a", gaussian_away_from_zero(rng, m, k));
        Parameter b("b", gaussian_away_from_zero(rng, k, n));
        Parameter c("c", gaussian_away_from_zero(rng, m, k));
        Parameter gamma("gamma", gaussian_away_from_zero(rng, 1, k));
        Parameter beta("beta", gaussian_tensor(rng, 1, k, 1.0));
        std::vector<int> labels;
        for (int i = 0; i < m; ++i) labels.push_back(static_cast<int>(rng() % k));

        auto run = [&worst](std::vector<Parameter*> ps, const mira::testing::LossFn& fn) {
            worst = std::max(worst, fd_max_rel_err(std::move(ps), fn));
        };

        run({&a, &c}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.add(t.param(*ps[0]), t.param(*ps[1]))));
        });
        run({&a, &c}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.sub(t.param(*ps[0]), t.param(*ps[1]))));
        });
        run({&a}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.scale(t.param(*ps[0]), -1.7)));
        });
        run({&a}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.relu(t.param(*ps[0]))));
        });
        run({&a, &b}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.matmul(t.param(*ps[0]), t.param(*ps[1]))));
        });
        run({&a, &c}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.matmul_nt(t.param(*ps[0]), t.param(*ps[1]))));
        });
        run({&a, &c}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.matmul_tn(t.param(*ps[0]), t.param(*ps[1]))));
        });
        run({&a}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.softmax_rows(t.param(*ps[0]))));
        });
        run({&a, &gamma, &beta}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(
                t.layer_norm_rows(t.param(*ps[0]), t.param(*ps[1]), t.param(*ps[2]), 1e-5)));
        });
        run({&a}, [&labels](Tape& t, std::vector<Parameter*>& ps) {
            return t.cross_entropy(t.param(*ps[0]), labels);
        });
        run({&a}, [](Tape& t, std::vector<Parameter*>& ps) {
            auto x = t.param(*ps[0]);
            return t.sum_all(t.tanh(t.div_by_scalar(x, t.sum_all(t.relu(x)))));
        });
        run({&a}, [m](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.slice_rows(t.param(*ps[0]), 0, (m + 1) / 2)));
        });
        run({&a}, [k](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.slice_cols(t.param(*ps[0]), 0, (k + 1) / 2)));
        });
        run({&a}, [m, k](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.reshape(t.param(*ps[0]), k, m)));
        });
        run({&a, &c}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(
                t.tanh(t.concat_rows({t.param(*ps[0]), t.param(*ps[1]), t.param(*ps[0])})));
        });
        run({&a, &c}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.concat_cols({t.param(*ps[0]), t.param(*ps[1])})));
        });
        run({&a, &gamma}, [](Tape& t, std::vector<Parameter*>& ps) {
            return t.sum_all(t.tanh(t.add_row_broadcast(t.param(*ps[0]), t.param(*ps[1]))));
        });
    }
    CHECK(worst < 1e-4);
    MESSAGE("worst op-level finite-difference relative error: ", worst);
}

TEST_CASE("fan-out accumulates gradients additively") {
    Parameter x("x", Tensor::from({{1.5}}));
    x.zero_grad();
    Tape tape;
    Var v = tape.param(x);
    tape.backward(tape.sum_all(tape.add(v, v)));
    CHECK(x.grad.item() == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("parameter leaves are deduplicated on one tape") {
    Parameter x("x", Tensor::from({{2.0}}));
    Tape tape;
    Var v1 = tape.param(x);
    Var v2 = tape.param(x);
    CHECK(v1.idx == v2.idx);
}

TEST_CASE("non-trainable leaves receive no gradient flush") {
    Parameter x("x", Tensor::from({{1.0, 2.0}}), /*train=*/false);
    x.zero_grad();
    Tape tape;
    tape.backward(tape.sum_all(tape.tanh(tape.param(x))));
    CHECK(x.grad.max_abs() == 0.0);
}

TEST_CASE("gradients are explicitly zeroed, never implicitly") {
    Parameter x("x", Tensor::from({{1.0}}));
    x.zero_grad();
    auto run = [&x]() {
        Tape tape;
        tape.backward(tape.sum_all(tape.scale(tape.param(x), 3.0)));
    };
    run();
    CHECK(x.grad.item() == doctest::Approx(3.0));
    run();  // second backward without zeroing accumulates
    CHECK(x.grad.item() == doctest::Approx(6.0));
    x.zero_grad();
    CHECK(x.grad.item() == 0.0);
}

TEST_CASE("tape replay is deterministic: bitwise-identical gradients") {
    auto build = [](std::uint64_t seed) {
        auto rng = make_rng(seed, "det");
        Parameter a("a", gaussian_tensor(rng, 4, 4, 1.0));
        Parameter b("b", gaussian_tensor(rng, 4, 4, 1.0));
        a.zero_grad();
        b.zero_grad();
        Tape tape;
        Var loss = tape.sum_all(tape.tanh(tape.matmul(tape.param(a), tape.param(b))));
        tape.backward(loss);
        return std::make_pair(a.grad.checksum(), b.grad.checksum());
    };
    CHECK(build(123) == build(123));
    CHECK(build(123) != build(124));
}

TEST_CASE("backward requires a scalar root") {
    Tape tape;
    Var v = tape.constant(Tensor(2, 2));
    CHECK_THROWS_AS(tape.backward(v), shape_error);
}
