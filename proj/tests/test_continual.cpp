#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mira/continual.hpp"
#include "mira/kernels.hpp"
#include "mira/rng.hpp"

using namespace mira;

namespace {

Tensor unit(int dim, int axis) {
    Tensor t(dim, 1);
    t.at(axis, 0) = 1.0;
    return t;
}

// Gradient set whose empirical second moment is diagonal with the given
// entries (up to the 1/N normalization, which rescales all eigenvalues
// equally and leaves the energy criterion untouched).
std::vector<Tensor> diag_grads(const std::vector<double>& diag) {
    std::vector<Tensor> grads;
    for (size_t i = 0; i < diag.size(); ++i) {
        Tensor g(static_cast<int>(diag.size()), 1);
        g.at(static_cast<int>(i), 0) = std::sqrt(diag[i]);
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace

TEST_CASE("accumulate builds the empirical second moment") {
    SUBCASE("single basis vector") {
        GradientSubspace sub = make_subspace("g", 3, 0.7);
        accumulate(sub, {unit(3, 0)});
        const Tensor sigma = sub.current_second_moment();
        CHECK(sigma.at(0, 0) == 1.0);
        CHECK(sigma.at(1, 1) == 0.0);
        CHECK(sigma.at(0, 1) == 0.0);
    }
    SUBCASE("two orthogonal gradients average to half the identity") {
        GradientSubspace sub = make_subspace("g", 2, 0.7);
        accumulate(sub, {unit(2, 0), unit(2, 1)});
        const Tensor sigma = sub.current_second_moment();
        CHECK(sigma.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(sigma.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(sigma.at(0, 1) == 0.0);
    }
    SUBCASE("random 4-dim set of 50 gradients matches the loop oracle") {
        auto rng = make_rng(3, "accum");
        std::vector<Tensor> grads;
        for (int i = 0; i < 50; ++i) grads.push_back(gaussian_tensor(rng, 4, 1, 1.0));
        GradientSubspace sub = make_subspace("g", 4, 0.7);
        accumulate(sub, grads);
        const Tensor sigma = sub.current_second_moment();
        Tensor oracle(4, 4);
        for (const Tensor& g : grads) {
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) oracle.at(r, c) += g.at(r, 0) * g.at(c, 0);
        }
        oracle.scale_in_place(1.0 / 50.0);
        CHECK(kernels::sub(sigma, oracle).max_abs() < 1e-12);
    }
    SUBCASE("empty gradient list is a contract error") {
        GradientSubspace sub = make_subspace("g", 4, 0.7);
        CHECK_THROWS_AS(accumulate(sub, {}), contract_error);
    }
}

TEST_CASE("select_rank") {
    CHECK(select_rank({4.0, 3.0, 2.0, 1.0}, 0.7) == 2);
    CHECK(select_rank({4.0, 3.0, 2.0, 1.0}, 1.0) == 4);
    CHECK(select_rank({4.0, 3.0, 0.0, 0.0}, 1.0) == 2);  // number of nonzero eigenvalues
    CHECK(select_rank({1.0, 0.0, 0.0}, 0.1) == 1);
    CHECK(select_rank({1.0, 0.0, 0.0}, 0.999) == 1);
    CHECK_THROWS_AS(select_rank({0.0, 0.0}, 0.5), contract_error);
    CHECK_THROWS_AS(select_rank({3.0, 4.0}, 0.5), contract_error);  // not sorted
}

TEST_CASE("update_basis keeps the top eigenvectors by energy") {
    SUBCASE("diag(4,3,2,1) with eps 0.7 spans e1 and e2") {
        GradientSubspace sub = make_subspace("g", 4, 0.7);
        accumulate(sub, diag_grads({4.0, 3.0, 2.0, 1.0}));
        update_basis(sub);
        REQUIRE(sub.rank() == 2);
        Tensor expected(4, 2);
        expected.at(0, 0) = 1.0;
        expected.at(1, 1) = 1.0;
        const auto angles = principal_angles(sub.basis, expected);
        for (double a : angles) CHECK(a < 1e-10);
        CHECK(sub.current_count == 0);  // folded into the completed moment
    }
    SUBCASE("identity moment: test the projector, not the basis") {
        GradientSubspace sub = make_subspace("g", 3, 0.5);
        accumulate(sub, diag_grads({1.0, 1.0, 1.0}));
        update_basis(sub);
        const Tensor gram = kernels::matmul_tn(sub.basis, sub.basis);
        CHECK(kernels::sub(gram, Tensor::identity(sub.rank())).max_abs() < 1e-10);
        const Tensor projector = kernels::matmul_nt(sub.basis, sub.basis);
        CHECK(kernels::sub(kernels::matmul(projector, projector), projector).max_abs() < 1e-12);
    }
    SUBCASE("update without accumulated gradients is a contract error") {
        GradientSubspace sub = make_subspace("g", 3, 0.7);
        CHECK_THROWS_AS(update_basis(sub), contract_error);
    }
}

TEST_CASE("basis merge across tasks re-truncates on the summed moments") {
    GradientSubspace sub = make_subspace("g", 3, 0.6);
    accumulate(sub, {kernels::scale(unit(3, 0), 2.0)});  // task 1 energy on e1
    update_basis(sub);
    CHECK(sub.rank() == 1);
    accumulate(sub, {kernels::scale(unit(3, 1), 10.0)});  // task 2 dominates on e2
    update_basis(sub);
    // summed moments: diag(4, 100, 0) -> e2 alone already exceeds 60% energy
    REQUIRE(sub.rank() == 1);
    CHECK(std::fabs(sub.basis.at(1, 0)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("project_gradient") {
    SUBCASE("hand case: U = e1 removes the first coordinate") {
        GradientSubspace sub = make_subspace("g", 2, 0.9);
        accumulate(sub, {unit(2, 0)});
        update_basis(sub);
        REQUIRE(sub.rank() == 1);
        const Tensor projected = project_gradient(Tensor::from({{3.0}, {4.0}}), sub);
        CHECK(std::fabs(projected.at(0, 0)) < 1e-12);
        CHECK(projected.at(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("empty basis leaves the gradient unchanged") {
        GradientSubspace sub = make_subspace("g", 3, 0.7);
        const Tensor g = Tensor::from({{1.0}, {2.0}, {3.0}});
        CHECK(project_gradient(g, sub) == g);
    }
    SUBCASE("orthogonality and idempotence on random instances") {
        for (int trial = 0; trial < 100; ++trial) {
            auto rng = make_rng(7, "proj", trial);
            const int d = 3 + static_cast<int>(rng() % 6);
            GradientSubspace sub = make_subspace("g", d, 0.7);
            std::vector<Tensor> grads;
            for (int i = 0; i < 2 * d; ++i) grads.push_back(gaussian_tensor(rng, d, 1, 1.0));
            accumulate(sub, grads);
            update_basis(sub);
            const Tensor g = gaussian_tensor(rng, d, 1, 1.0);
            const Tensor p = project_gradient(g, sub);
            CHECK(kernels::matmul_tn(sub.basis, p).max_abs() < 1e-10);
            CHECK(kernels::sub(project_gradient(p, sub), p).max_abs() < 1e-12);
        }
    }
}

TEST_CASE("grow_subspace pads moments and basis with zeros") {
    GradientSubspace sub = make_subspace("g", 2, 0.9);
    accumulate(sub, {unit(2, 0)});
    update_basis(sub);
    grow_subspace(sub, 4);
    CHECK(sub.dim == 4);
    CHECK(sub.basis.rows() == 4);
    CHECK(sub.moment_completed.rows() == 4);
    // new coordinates are unconstrained
    Tensor g(4, 1);
    g.at(2, 0) = 5.0;
    g.at(3, 0) = -1.0;
    CHECK(project_gradient(g, sub) == g);
    // old protected direction still removed
    g.at(0, 0) = 2.0;
    const Tensor p = project_gradient(g, sub);
    CHECK(std::fabs(p.at(0, 0)) < 1e-12);
    CHECK(p.at(2, 0) == 5.0);
    CHECK_THROWS_AS(grow_subspace(sub, 3), contract_error);
}

TEST_CASE("oja_converge") {
    SUBCASE("rank-one moment drives the column to the principal axis") {
        HebbianLearner learner;
        auto rng = make_rng(11, "oja1");
        learner.w = gaussian_tensor(rng, 3, 1, 0.5);
        const OjaResult res = oja_converge(learner, {kernels::scale(unit(3, 0), 1.0)});
        REQUIRE(res.converged);
        CHECK(std::fabs(std::fabs(res.w.at(0, 0)) - 1.0) < 1e-5);
        CHECK(std::fabs(res.w.at(1, 0)) < 1e-5);
    }
    SUBCASE("diag(4,3): ordered eigenvectors, first column on e1") {
        HebbianLearner learner;
        auto rng = make_rng(13, "oja2");
        learner.w = gaussian_tensor(rng, 2, 2, 0.5);
        const OjaResult res = oja_converge(learner, diag_grads({4.0, 3.0}));
        REQUIRE(res.converged);
        CHECK(std::fabs(std::fabs(res.w.at(0, 0)) - 1.0) < 1e-4);
        CHECK(std::fabs(res.w.at(1, 0)) < 1e-4);
        CHECK(std::fabs(std::fabs(res.w.at(1, 1)) - 1.0) < 1e-4);
    }
    SUBCASE("sweep cap reports non-convergence instead of failing") {
        HebbianLearner learner;
        auto rng = make_rng(17, "oja3");
        learner.w = gaussian_tensor(rng, 3, 2, 0.5);
        const OjaResult res = oja_converge(learner, diag_grads({4.0, 3.0, 2.0}), /*max_sweeps=*/3);
        CHECK_FALSE(res.converged);
        CHECK(res.sweeps == 3);
    }
}

TEST_CASE("subspace equivalence: Sanger fixed point spans the top eigenspace") {
    // The oracle iterates the Hebbian rule directly; the basis update goes
    // through the eigendecomposition. Their spans must coincide.
    GradientSubspace sub = make_subspace("g", 4, 0.7);
    const auto grads = diag_grads({4.0, 3.0, 2.0, 1.0});
    accumulate(sub, grads);
    update_basis(sub);
    REQUIRE(sub.rank() == 2);

    HebbianLearner learner;
    auto rng = make_rng(19, "lemma");
    learner.w = gaussian_tensor(rng, 4, 2, 0.5);
    const OjaResult res = oja_converge(learner, grads);
    REQUIRE(res.converged);
    const auto angles = principal_angles(sub.basis, res.w);
    for (double a : angles) CHECK(a < 1e-3);
}

TEST_CASE("subspace equivalence holds on ten seeded instances of dimension 3-6") {
    int convergent = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto rng = make_rng(23, "lemma-seeded", trial);
        const int d = 3 + static_cast<int>(rng() % 4);
        // anisotropic directions keep the spectrum well separated
        std::vector<Tensor> grads;
        for (int i = 0; i < 60; ++i) {
            Tensor g = gaussian_tensor(rng, d, 1, 1.0);
            for (int r = 0; r < d; ++r) g.at(r, 0) *= std::pow(0.6, r);
            grads.push_back(std::move(g));
        }
        GradientSubspace sub = make_subspace("g", d, 0.7);
        accumulate(sub, grads);
        update_basis(sub);

        HebbianLearner learner;
        learner.w = gaussian_tensor(rng, d, sub.rank(), 0.5);
        const OjaResult res = oja_converge(learner, grads);
        if (!res.converged) continue;  // inconclusive trial, not a failure
        ++convergent;
        const auto angles = principal_angles(sub.basis, res.w);
        for (double a : angles) CHECK(a < 1e-3);
    }
    CHECK(convergent >= 8);
}

TEST_CASE("principal angles separate identical and orthogonal spans") {
    Tensor a(4, 2), b(4, 2);
    a.at(0, 0) = 1.0;
    a.at(1, 1) = 1.0;
    b.at(2, 0) = 1.0;
    b.at(3, 1) = 1.0;
    const auto zero_angles = principal_angles(a, a);
    for (double v : zero_angles) CHECK(v < 1e-12);
    const auto right_angles = principal_angles(a, b);
    for (double v : right_angles) CHECK(v == doctest::Approx(M_PI / 2).epsilon(1e-12));
}
