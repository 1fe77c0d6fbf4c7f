#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace soem {

/// Square real symmetric matrix. Construction checks symmetry to 1e-12
/// absolute and rejects non-finite entries; the stored matrix is exactly
/// symmetric (upper triangle mirrored).
class SymMatrix {
public:
    explicit SymMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
        if (m_.rows() != m_.cols() || m_.rows() < 1)
            throw std::invalid_argument("SymMatrix: matrix must be square and non-empty");
        if (!m_.allFinite())
            throw std::invalid_argument("SymMatrix: non-finite entry");
        const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12)
            throw std::invalid_argument("SymMatrix: asymmetry " + std::to_string(asym) +
                                        " exceeds 1e-12");
        m_ = m_.selfadjointView<Eigen::Upper>();
    }

    [[nodiscard]] int dim() const { return static_cast<int>(m_.rows()); }
    [[nodiscard]] const Eigen::MatrixXd& data() const { return m_; }

private:
    Eigen::MatrixXd m_;
};

/// Orthonormal basis stored column-wise: U^T U = I within 1e-10 and
/// |det U| = 1 within 1e-8.
class OrthoBasis {
public:
    explicit OrthoBasis(Eigen::MatrixXd u) : u_(std::move(u)) {
        if (u_.rows() != u_.cols() || u_.rows() < 1)
            throw std::invalid_argument("OrthoBasis: matrix must be square and non-empty");
        if (!u_.allFinite())
            throw std::invalid_argument("OrthoBasis: non-finite entry");
        const int n = static_cast<int>(u_.rows());
        const double drift =
            (u_.transpose() * u_ - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
        if (drift > 1e-10)
            throw std::invalid_argument("OrthoBasis: U^T U deviates from identity by " +
                                        std::to_string(drift));
        const double det = std::abs(u_.determinant());
        if (std::abs(det - 1.0) > 1e-8)
            throw std::invalid_argument("OrthoBasis: |det| = " + std::to_string(det));
    }

    [[nodiscard]] static OrthoBasis identity(int dim) {
        return OrthoBasis(Eigen::MatrixXd::Identity(dim, dim));
    }

    [[nodiscard]] int dim() const { return static_cast<int>(u_.rows()); }
    [[nodiscard]] const Eigen::MatrixXd& data() const { return u_; }
    [[nodiscard]] Eigen::VectorXd column(int j) const { return u_.col(j); }

private:
    Eigen::MatrixXd u_;
};

/// Symmetric matrices with per-matrix nonnegative weights, all sharing one
/// dimension. At least one weight must be strictly positive.
struct WeightedSet {
    std::vector<SymMatrix> matrices;
    std::vector<double> weights;

    WeightedSet(std::vector<SymMatrix> ms, std::vector<double> ws)
        : matrices(std::move(ms)), weights(std::move(ws)) {
        if (matrices.empty())
            throw std::invalid_argument("WeightedSet: empty set");
        if (matrices.size() != weights.size())
            throw std::invalid_argument("WeightedSet: size mismatch between matrices and weights");
        const int d = matrices.front().dim();
        for (const auto& m : matrices)
            if (m.dim() != d)
                throw std::invalid_argument("WeightedSet: matrices must share one dimension");
        bool positive = false;
        for (double w : weights) {
            if (!(w >= 0.0))
                throw std::invalid_argument("WeightedSet: weights must be nonnegative");
            positive = positive || w > 0.0;
        }
        if (!positive)
            throw std::invalid_argument("WeightedSet: all weights are zero");
    }

    [[nodiscard]] int dim() const { return matrices.front().dim(); }
    [[nodiscard]] std::size_t size() const { return matrices.size(); }
};

/// Sum of squared off-diagonal entries. Zero iff the matrix is diagonal.
[[nodiscard]] inline double off(const Eigen::MatrixXd& a) {
    double s = 0.0;
    const auto n = a.rows();
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            if (i != j) s += a(i, j) * a(i, j);
    return s;
}

[[nodiscard]] inline double off(const SymMatrix& a) { return off(a.data()); }

struct JDOptions {
    double tol = 1e-8;   // rotation is skipped once |sin theta| drops below this
    int max_sweeps = 100;
};

struct JDResult {
    OrthoBasis basis;
    double residual = 0.0;  // weighted off-sum at the returned basis
    bool converged = false;
    int sweeps = 0;
    std::vector<double> sweep_residuals;  // criterion value after each sweep
};

namespace detail {

/// Rotation angle for the plane (p,q) minimizing the weighted off-sum:
/// [cos 2t, sin 2t] is the dominant eigenvector of the 2x2 Gram matrix of
/// the per-matrix vectors (b_pp - b_qq, 2 b_pq), sign fixed so cos 2t >= 0.
/// Returns (cos t, sin t).
inline std::pair<double, double> jacobi_angle(double gxx, double gxy, double gyy) {
    const double tr = gxx + gyy;
    if (!(tr > 0.0)) return {1.0, 0.0};
    const double diff = gxx - gyy;
    const double disc = std::sqrt(diff * diff + 4.0 * gxy * gxy);
    const double lmax = 0.5 * (tr + disc);
    // Eigenvector of [[gxx,gxy],[gxy,gyy]] for lmax; pick the better-conditioned form.
    double x, y;
    if (lmax - gyy >= lmax - gxx) {
        x = lmax - gyy;
        y = gxy;
    } else {
        x = gxy;
        y = lmax - gxx;
    }
    const double norm = std::hypot(x, y);
    if (norm <= 0.0) return {1.0, 0.0};
    double c2 = x / norm, s2 = y / norm;
    if (c2 < 0.0) {
        c2 = -c2;
        s2 = -s2;
    }
    const double c = std::sqrt(0.5 * (1.0 + c2));
    const double s = 0.5 * s2 / c;
    return {c, s};
}

/// Applies the Givens rotation G(p,q,theta) as B <- G^T B G for symmetric B.
inline void rotate_sym(Eigen::MatrixXd& b, int p, int q, double c, double s) {
    const auto n = b.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i == p || i == q) continue;
        const double bip = b(i, p), biq = b(i, q);
        b(i, p) = c * bip + s * biq;
        b(i, q) = -s * bip + c * biq;
        b(p, i) = b(i, p);
        b(q, i) = b(i, q);
    }
    const double bpp = b(p, p), bqq = b(q, q), bpq = b(p, q);
    b(p, p) = c * c * bpp + 2.0 * c * s * bpq + s * s * bqq;
    b(q, q) = s * s * bpp - 2.0 * c * s * bpq + c * c * bqq;
    b(p, q) = c * s * (bqq - bpp) + (c * c - s * s) * bpq;
    b(q, p) = b(p, q);
}

/// Applies the same rotation to the accumulated basis, columns p and q.
inline void rotate_cols(Eigen::MatrixXd& u, int p, int q, double c, double s) {
    const auto n = u.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double uip = u(i, p), uiq = u(i, q);
        u(i, p) = c * uip + s * uiq;
        u(i, q) = -s * uip + c * uiq;
    }
}

}  // namespace detail

/// Weighted orthogonal approximate joint diagonalization by cyclic Jacobi
/// sweeps. Finds U minimizing sum_m w_m * off(U^T C_m U). Each plane rotation
/// takes the closed-form angle that is optimal for the weighted criterion, so
/// the criterion never increases. Sweeps run over all index pairs in row-major
/// order; the algorithm stops when a full sweep produced no rotation with
/// |sin theta| >= tol, or after max_sweeps (reported via `converged`, not an
/// error). An optional warm start replaces the identity as the initial basis.
[[nodiscard]] inline JDResult joint_diagonalize(const WeightedSet& set,
                                                const std::optional<OrthoBasis>& init = {},
                                                const JDOptions& opt = {}) {
    if (!(opt.tol > 0.0))
        throw std::invalid_argument("joint_diagonalize: tol must be positive");
    if (opt.max_sweeps < 1)
        throw std::invalid_argument("joint_diagonalize: max_sweeps must be >= 1");
    const int n = set.dim();
    if (init && init->dim() != n)
        throw std::invalid_argument("joint_diagonalize: init dimension " +
                                    std::to_string(init->dim()) + " does not match set dimension " +
                                    std::to_string(n));

    Eigen::MatrixXd u = init ? init->data() : Eigen::MatrixXd::Identity(n, n);

    // Transformed working copies B_m = U^T C_m U; zero-weight members are inert
    // and dropped up front.
    std::vector<Eigen::MatrixXd> b;
    std::vector<double> w;
    b.reserve(set.size());
    w.reserve(set.size());
    for (std::size_t m = 0; m < set.size(); ++m) {
        if (set.weights[m] <= 0.0) continue;
        if (init)
            b.push_back(u.transpose() * set.matrices[m].data() * u);
        else
            b.push_back(set.matrices[m].data());
        w.push_back(set.weights[m]);
    }
    const std::size_t count = b.size();

    const auto criterion = [&] {
        double s = 0.0;
        for (std::size_t m = 0; m < count; ++m) s += w[m] * off(b[m]);
        return s;
    };

    JDResult result{OrthoBasis::identity(n)};
    bool converged = n < 2;
    int sweeps = 0;
    while (!converged && sweeps < opt.max_sweeps) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double gxx = 0.0, gxy = 0.0, gyy = 0.0;
                for (std::size_t m = 0; m < count; ++m) {
                    const double x = b[m](p, p) - b[m](q, q);
                    const double y = 2.0 * b[m](p, q);
                    gxx += w[m] * x * x;
                    gxy += w[m] * x * y;
                    gyy += w[m] * y * y;
                }
                const auto [c, s] = detail::jacobi_angle(gxx, gxy, gyy);
                if (std::abs(s) < opt.tol) continue;
                for (std::size_t m = 0; m < count; ++m)
                    detail::rotate_sym(b[m], p, q, c, s);
                detail::rotate_cols(u, p, q, c, s);
                rotated = true;
            }
        }
        ++sweeps;
        result.sweep_residuals.push_back(criterion());
        converged = !rotated;
    }

    result.basis = OrthoBasis(std::move(u));
    result.residual = criterion();
    result.converged = converged;
    result.sweeps = sweeps;
    return result;
}

/// Residual off-diagonal mass of a set after approximate joint
/// diagonalization with unit weights. Symmetric in argument order and
/// nonnegative; zero (to tolerance) exactly when the set commutes.
[[nodiscard]] inline double delta(std::span<const SymMatrix> set, const JDOptions& opt = {}) {
    if (set.empty())
        throw std::invalid_argument("delta: empty set");
    std::vector<SymMatrix> ms(set.begin(), set.end());
    WeightedSet ws(std::move(ms), std::vector<double>(set.size(), 1.0));
    return joint_diagonalize(ws, {}, opt).residual;
}

[[nodiscard]] inline double delta(const std::vector<SymMatrix>& set, const JDOptions& opt = {}) {
    return delta(std::span<const SymMatrix>(set), opt);
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns of the
/// input are the vectors; the first output column stays parallel to the first
/// input. Near-dependence (projection residual below 1e-10 of the original
/// norm) is an error; callers drawing random vectors regenerate and retry.
[[nodiscard]] inline OrthoBasis gram_schmidt(const Eigen::MatrixXd& vectors) {
    if (vectors.rows() != vectors.cols() || vectors.rows() < 1)
        throw std::invalid_argument("gram_schmidt: need a square set of vectors");
    if (!vectors.allFinite())
        throw std::invalid_argument("gram_schmidt: non-finite entry");
    const int n = static_cast<int>(vectors.rows());
    Eigen::MatrixXd q = vectors;
    for (int j = 0; j < n; ++j) {
        const double orig = q.col(j).norm();
        for (int pass = 0; pass < 2; ++pass)
            for (int i = 0; i < j; ++i)
                q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
        const double norm = q.col(j).norm();
        if (norm <= 1e-10 * std::max(orig, 1e-300))
            throw std::invalid_argument("gram_schmidt: vectors are rank deficient at column " +
                                        std::to_string(j));
        q.col(j) /= norm;
    }
    return OrthoBasis(std::move(q));
}

struct EigenDecomposition {
    Eigen::VectorXd values;  // descending
    OrthoBasis basis;        // columns are the corresponding eigenvectors
};

/// Symmetric eigendecomposition, eigenvalues sorted descending. This is the
/// independent route against which the Jacobi path is checked.
[[nodiscard]] inline EigenDecomposition sym_eigen(const SymMatrix& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a.data());
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("sym_eigen: eigensolver failed");
    const int n = a.dim();
    Eigen::VectorXd values(n);
    Eigen::MatrixXd vectors(n, n);
    for (int j = 0; j < n; ++j) {
        values(j) = solver.eigenvalues()(n - 1 - j);
        vectors.col(j) = solver.eigenvectors().col(n - 1 - j);
    }
    return {std::move(values), OrthoBasis(std::move(vectors))};
}

}  // namespace soem
