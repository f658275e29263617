#pragma once

#include <string>
#include <vector>

#include "mira/tensor.hpp"

namespace mira {

// Protected gradient subspace for one parameter group. Second moments are
// summed across tasks with equal weights and re-decomposed at every task
// boundary; the basis keeps the top eigenvectors meeting the energy budget.
struct GradientSubspace {
    std::string param_group_id;
    double energy_budget = 0.7;
    int dim = 0;              // current flattened parameter dimension
    Tensor moment_completed;  // d x d, sum over completed tasks of per-task second moments
    Tensor moment_current;    // d x d, running outer-product sum for the task in flight
    long current_count = 0;
    Tensor basis;             // d x k, orthonormal columns (empty before first update)

    int rank() const { return basis.empty() ? 0 : basis.cols(); }
    bool has_basis() const { return !basis.empty(); }
    // (1/N) sum g g^T over the gradients accumulated so far for this task.
    Tensor current_second_moment() const;
};

GradientSubspace make_subspace(std::string group_id, int dim, double energy_budget);

// Pads moments and basis with zero rows/cols when the parameter vector grows
// (new coordinates are unconstrained until observed).
void grow_subspace(GradientSubspace& sub, int new_dim);

// Folds a batch of observed gradient vectors (d x 1 columns) into the
// current task's second moment.
void accumulate(GradientSubspace& sub, const std::vector<Tensor>& grads);

// Smallest k whose cumulative eigenvalue ratio reaches the energy budget.
// Eigenvalues must be sorted descending and non-negative with positive sum.
int select_rank(const std::vector<double>& eigenvalues_desc, double energy_budget);

// Completes the task in flight: adds its second moment to the accumulated
// sum, re-decomposes, keeps the top-k eigenvectors by the energy criterion.
void update_basis(GradientSubspace& sub);

// g - U (U^T g); identity before the first basis exists.
Tensor project_gradient(const Tensor& g, const GradientSubspace& sub);

// ---------------------------------------------------------------------------
// Generalized Hebbian (Sanger) test oracle. Kept independent of the basis
// update above: it iterates the learning rule directly, no eigensolver.
// ---------------------------------------------------------------------------

struct HebbianLearner {
    Tensor w;               // d x k
    double step_size = 1e-2;
};

struct OjaResult {
    Tensor w;
    bool converged = false;
    long sweeps = 0;
};

// Iterates delta W = eta (Sigma W - W lower(W^T Sigma W)) with Sigma the
// empirical second moment of `grads`, until ||delta W||_F < tol or the sweep
// cap is hit (reported as not converged, never thrown).
OjaResult oja_converge(HebbianLearner learner, const std::vector<Tensor>& grads,
                       long max_sweeps = 100000, double tol = 1e-8);

// Principal angles (radians, ascending) between the column spans of two
// bases; inputs need not be orthonormal.
std::vector<double> principal_angles(const Tensor& a, const Tensor& b);

// Symmetric eigendecomposition helper (descending eigenvalues).
void symmetric_eig(const Tensor& m, std::vector<double>* eigenvalues_desc, Tensor* eigenvectors);

}  // namespace mira
