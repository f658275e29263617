#include "mira/continual.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "mira/kernels.hpp"

namespace mira {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (int r = 0; r < t.rows(); ++r)
        for (int c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
    return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
    Tensor t(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int r = 0; r < t.rows(); ++r)
        for (int c = 0; c < t.cols(); ++c) t.at(r, c) = m(r, c);
    return t;
}

}  // namespace

Tensor GradientSubspace::current_second_moment() const {
    check_contract(current_count > 0, "no gradients accumulated for the current task");
    return kernels::scale(moment_current, 1.0 / static_cast<double>(current_count));
}

GradientSubspace make_subspace(std::string group_id, int dim, double energy_budget) {
    check_config(energy_budget > 0.0 && energy_budget <= 1.0, "energy budget must be in (0, 1]");
    check_config(dim > 0, "subspace dimension must be positive");
    GradientSubspace sub;
    sub.param_group_id = std::move(group_id);
    sub.energy_budget = energy_budget;
    sub.dim = dim;
    sub.moment_completed = Tensor(dim, dim);
    sub.moment_current = Tensor(dim, dim);
    return sub;
}

void grow_subspace(GradientSubspace& sub, int new_dim) {
    check_contract(new_dim >= sub.dim, "subspace dimension cannot shrink");
    if (new_dim == sub.dim) return;
    auto pad_square = [new_dim](const Tensor& m) {
        Tensor out(new_dim, new_dim);
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) out.at(r, c) = m.at(r, c);
        return out;
    };
    sub.moment_completed = pad_square(sub.moment_completed);
    sub.moment_current = pad_square(sub.moment_current);
    if (!sub.basis.empty()) {
        Tensor padded(new_dim, sub.basis.cols());
        for (int r = 0; r < sub.basis.rows(); ++r)
            for (int c = 0; c < sub.basis.cols(); ++c) padded.at(r, c) = sub.basis.at(r, c);
        sub.basis = std::move(padded);
    }
    sub.dim = new_dim;
}

void accumulate(GradientSubspace& sub, const std::vector<Tensor>& grads) {
    check_contract(!grads.empty(), "accumulate requires at least one gradient");
    for (const Tensor& g : grads) {
        check_shape(g.rows() == sub.dim && g.cols() == 1, "gradient must be dim x 1");
        for (int r = 0; r < sub.dim; ++r) {
            const double gr = g.at(r, 0);
            if (gr == 0.0) continue;
            for (int c = 0; c < sub.dim; ++c) {
                sub.moment_current.at(r, c) += gr * g.at(c, 0);
            }
        }
        sub.current_count += 1;
    }
}

int select_rank(const std::vector<double>& eigenvalues_desc, double energy_budget) {
    check_contract(!eigenvalues_desc.empty(), "select_rank needs a non-empty spectrum");
    double total = 0.0;
    for (size_t i = 0; i < eigenvalues_desc.size(); ++i) {
        const double v = eigenvalues_desc[i];
        check_contract(v >= 0.0, "eigenvalues must be non-negative");
        if (i + 1 < eigenvalues_desc.size()) {
            check_contract(eigenvalues_desc[i] >= eigenvalues_desc[i + 1],
                           "eigenvalues must be sorted descending");
        }
        total += v;
    }
    check_contract(total > 0.0, "select_rank on an all-zero spectrum");
    double cum = 0.0;
    for (size_t k = 0; k < eigenvalues_desc.size(); ++k) {
        cum += eigenvalues_desc[k];
        if (cum / total >= energy_budget) return static_cast<int>(k) + 1;
    }
    return static_cast<int>(eigenvalues_desc.size());
}

void symmetric_eig(const Tensor& m, std::vector<double>* eigenvalues_desc, Tensor* eigenvectors) {
    check_shape(m.rows() == m.cols(), "symmetric_eig requires a square matrix");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_eigen(m));
    if (solver.info() != Eigen::Success) throw numeric_error("eigendecomposition failed");
    const int n = m.rows();
    if (eigenvalues_desc) {
        eigenvalues_desc->resize(n);
        for (int i = 0; i < n; ++i) (*eigenvalues_desc)[i] = solver.eigenvalues()(n - 1 - i);
    }
    if (eigenvectors) {
        Eigen::MatrixXd v(n, n);
        for (int i = 0; i < n; ++i) v.col(i) = solver.eigenvectors().col(n - 1 - i);
        *eigenvectors = from_eigen(v);
    }
}

void update_basis(GradientSubspace& sub) {
    const Tensor task_moment = sub.current_second_moment();
    sub.moment_completed.add_in_place(task_moment);
    sub.moment_current.fill(0.0);
    sub.current_count = 0;

    std::vector<double> eigenvalues;
    Tensor eigenvectors;
    symmetric_eig(sub.moment_completed, &eigenvalues, &eigenvectors);
    for (double& v : eigenvalues) v = std::max(v, 0.0);
    const int k = select_rank(eigenvalues, sub.energy_budget);
    sub.basis = kernels::slice_cols(eigenvectors, 0, k);
}

Tensor project_gradient(const Tensor& g, const GradientSubspace& sub) {
    check_shape(g.cols() == 1, "project_gradient expects a column vector");
    if (!sub.has_basis()) return g;
    check_shape(g.rows() == sub.dim, "gradient dimension mismatch");
    const Tensor coeffs = kernels::matmul_tn(sub.basis, g);        // k x 1
    return kernels::sub(g, kernels::matmul(sub.basis, coeffs));    // g - U U^T g
}

OjaResult oja_converge(HebbianLearner learner, const std::vector<Tensor>& grads, long max_sweeps,
                       double tol) {
    check_contract(!grads.empty(), "oja_converge requires gradients");
    const int d = learner.w.rows();
    const int k = learner.w.cols();
    Tensor sigma(d, d);
    for (const Tensor& g : grads) {
        check_shape(g.rows() == d && g.cols() == 1, "gradient must be d x 1");
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) sigma.at(r, c) += g.at(r, 0) * g.at(c, 0);
    }
    sigma.scale_in_place(1.0 / static_cast<double>(grads.size()));

    OjaResult out;
    Tensor w = learner.w;
    for (long sweep = 0; sweep < max_sweeps; ++sweep) {
        const double eta = learner.step_size / (1.0 + 1e-4 * static_cast<double>(sweep));
        const Tensor sw = kernels::matmul(sigma, w);  // d x k
        Tensor m = kernels::matmul_tn(w, sw);         // k x k
        // column i deflates against columns j <= i: keep rows j <= i of M
        for (int r = 0; r < k; ++r)
            for (int c = 0; c < r; ++c) m.at(r, c) = 0.0;
        const Tensor delta = kernels::scale(kernels::sub(sw, kernels::matmul(w, m)), eta);
        w.add_in_place(delta);
        if (delta.frobenius_norm() < tol) {
            out.converged = true;
            out.sweeps = sweep + 1;
            break;
        }
        out.sweeps = sweep + 1;
    }
    out.w = std::move(w);
    return out;
}

std::vector<double> principal_angles(const Tensor& a, const Tensor& b) {
    check_shape(a.rows() == b.rows(), "bases must live in the same space");
    check_shape(a.cols() == b.cols(), "bases must have equal rank for angle comparison");
    auto orthonormalize = [](const Tensor& m) {
        Eigen::MatrixXd e = to_eigen(m);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(e);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(e.rows(), e.cols());
        return q;
    };
    const Eigen::MatrixXd qa = orthonormalize(a);
    const Eigen::MatrixXd qb = orthonormalize(b);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
    std::vector<double> angles;
    angles.reserve(static_cast<size_t>(svd.singularValues().size()));
    for (int i = 0; i < svd.singularValues().size(); ++i) {
        const double s = std::min(1.0, std::max(-1.0, svd.singularValues()(i)));
        angles.push_back(std::acos(s));
    }
    std::sort(angles.begin(), angles.end());
    return angles;
}

}  // namespace mira
