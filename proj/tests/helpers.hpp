#pragma once

#include <Eigen/Dense>
#include <random>

#include "soem/linalg.hpp"

namespace soem::testing {

/// Deterministic random symmetric matrix with entries in [-1, 1].
inline SymMatrix random_sym(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (int j = 0; j < n; ++j) {
        a(j, j) = u(rng);
        for (int i = 0; i < j; ++i) {
            a(i, j) = u(rng);
            a(j, i) = a(i, j);
        }
    }
    return SymMatrix(a);
}

/// Random orthonormal basis via QR of a Gaussian matrix, sign-fixed so the
/// diagonal of R is positive (makes the draw unique).
inline OrthoBasis random_basis(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) a(i, j) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return OrthoBasis(q);
}

/// Family of matrices sharing the eigenbasis U: C_k = U D_k U^T with random
/// diagonal D_k. All members commute, so their joint residual is ~0.
inline std::vector<SymMatrix> commuting_family(const OrthoBasis& u, int count,
                                               std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(0.5, 5.0);
    const int n = u.dim();
    std::vector<SymMatrix> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        Eigen::VectorXd diag(n);
        for (int i = 0; i < n; ++i) diag(i) = d(rng);
        Eigen::MatrixXd c = u.data() * diag.asDiagonal() * u.data().transpose();
        out.emplace_back(SymMatrix((c + c.transpose()) / 2.0));
    }
    return out;
}

}  // namespace soem::testing
