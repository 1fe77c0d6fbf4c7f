#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "soem/embedding.hpp"
#include "soem/linalg.hpp"

namespace soem {

struct RPolicy {
    enum class Kind { fixed, energy };
    Kind kind = Kind::energy;
    double value = 0.90;  // component count for fixed, threshold for energy
};

/// Eigen-decomposition of an embedded covariance with a retained leading
/// subspace of r components.
class SSADecomposition {
public:
    SSADecomposition(int L, Eigen::VectorXd eigenvalues, OrthoBasis basis, int r,
                     std::string source_id)
        : L_(L), eigenvalues_(std::move(eigenvalues)), basis_(std::move(basis)), r_(r),
          source_id_(std::move(source_id)) {
        if (L_ < 2 || basis_.dim() != L_ || eigenvalues_.size() != L_)
            throw std::invalid_argument("SSADecomposition: inconsistent dimensions");
        if (r_ < 1 || r_ > L_)
            throw std::invalid_argument("SSADecomposition: r=" + std::to_string(r_) +
                                        " outside [1, " + std::to_string(L_) + "]");
        const double trace = eigenvalues_.sum();
        for (int i = 0; i < L_; ++i) {
            if (eigenvalues_(i) < -1e-10 * std::max(trace, 0.0))
                throw std::invalid_argument("SSADecomposition: negative eigenvalue");
            if (i > 0 && eigenvalues_(i) > eigenvalues_(i - 1))
                throw std::invalid_argument("SSADecomposition: eigenvalues not descending");
        }
    }

    [[nodiscard]] int L() const { return L_; }
    [[nodiscard]] const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
    [[nodiscard]] const OrthoBasis& basis() const { return basis_; }
    [[nodiscard]] int r() const { return r_; }
    [[nodiscard]] const std::string& source_id() const { return source_id_; }

private:
    int L_;
    Eigen::VectorXd eigenvalues_;
    OrthoBasis basis_;
    int r_;
    std::string source_id_;
};

/// Linear recurrence coefficients estimated from a retained eigenbasis.
/// phi[k] multiplies the k-th value of the trailing window in chronological
/// order: phi[0] pairs with the oldest of the last L-1 observations.
struct LRFModel {
    Eigen::VectorXd phi;  // length L-1
    double verticality = 0.0;  // sum of squared last-row components over retained columns
    int r = 0;
    int L = 0;
};

/// Eigen-pairs of the covariance plus a retention rule: fixed keeps the given
/// count (clamped to L), energy keeps the smallest r whose leading eigenvalue
/// mass reaches the threshold. A zero covariance has no energy to apportion
/// and retains one component.
[[nodiscard]] inline SSADecomposition decompose(const EmbeddedCovariance& c,
                                                const RPolicy& policy = {}) {
    EigenDecomposition eig = sym_eigen(c.matrix());
    const int L = c.dim();
    int r = 0;
    switch (policy.kind) {
        case RPolicy::Kind::fixed: {
            const long k = std::lround(policy.value);
            if (k < 1)
                throw std::invalid_argument("decompose: fixed r must be >= 1, got " +
                                            std::to_string(k));
            r = static_cast<int>(std::min(k, static_cast<long>(L)));
            break;
        }
        case RPolicy::Kind::energy: {
            if (!(policy.value > 0.0) || policy.value > 1.0)
                throw std::invalid_argument("decompose: energy threshold must be in (0, 1]");
            double total = 0.0;
            for (int i = 0; i < L; ++i) total += std::max(eig.values(i), 0.0);
            if (total <= 0.0) {
                r = 1;
                break;
            }
            double cum = 0.0;
            r = L;
            for (int i = 0; i < L; ++i) {
                cum += std::max(eig.values(i), 0.0);
                if (cum >= policy.value * total) {
                    r = i + 1;
                    break;
                }
            }
            break;
        }
    }
    return {L, eig.values, std::move(eig.basis), r, c.source_id()};
}

/// Rank-r reconstruction: project the trajectory matrix onto the retained
/// subspace and average each anti-diagonal back into a series of the original
/// length.
[[nodiscard]] inline TimeSeries reconstruct(const TrajectoryMatrix& x,
                                            const SSADecomposition& dec) {
    if (dec.L() != x.L())
        throw std::invalid_argument("reconstruct: decomposition L=" + std::to_string(dec.L()) +
                                    " does not match trajectory L=" + std::to_string(x.L()));
    const int L = x.L(), K = x.K(), n = L + K - 1;
    const Eigen::MatrixXd ur = dec.basis().data().leftCols(dec.r());
    const Eigen::MatrixXd xhat = ur * (ur.transpose() * x.entries());

    TimeSeries out{x.source_id(), std::vector<double>(n, 0.0), std::nullopt};
    std::vector<int> hits(n, 0);
    for (int j = 0; j < K; ++j)
        for (int i = 0; i < L; ++i) {
            out.values[i + j] += xhat(i, j);
            ++hits[i + j];
        }
    for (int t = 0; t < n; ++t) out.values[t] /= hits[t];
    return out;
}

/// Recurrence coefficients from the retained eigenvectors: with pi_j the last
/// row and U^del the first L-1 rows, phi = sum_j pi_j U_j^del / (1 - sum pi^2).
/// The result depends only on the subspace, so it is invariant to series
/// scaling and eigenvector sign.
[[nodiscard]] inline LRFModel lrf(const SSADecomposition& dec) {
    const int L = dec.L();
    const Eigen::MatrixXd& u = dec.basis().data();
    double nu2 = 0.0;
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(L - 1);
    for (int j = 0; j < dec.r(); ++j) {
        const double pi = u(L - 1, j);
        nu2 += pi * pi;
        phi += pi * u.col(j).head(L - 1);
    }
    if (nu2 >= 1.0 - 1e-6)
        throw std::runtime_error("lrf '" + dec.source_id() +
                                 "': vertical eigenspace, LRF undefined");
    phi /= 1.0 - nu2;
    return {std::move(phi), nu2, dec.r(), L};
}

/// Recurrent multi-step forecast: each step applies the recurrence to the
/// last L-1 values, then the forecast joins the window (chained prediction).
[[nodiscard]] inline std::vector<double> forecast(const TimeSeries& series, const LRFModel& model,
                                                  int horizon) {
    if (horizon < 1)
        throw std::invalid_argument("forecast: horizon must be >= 1, got " +
                                    std::to_string(horizon));
    const int w = model.L - 1;
    if (static_cast<int>(series.length()) < w)
        throw std::invalid_argument("forecast '" + series.id + "': series length " +
                                    std::to_string(series.length()) + " < window " +
                                    std::to_string(w));
    std::vector<double> window(series.values.end() - w, series.values.end());
    std::vector<double> out;
    out.reserve(horizon);
    for (int h = 0; h < horizon; ++h) {
        double next = 0.0;
        for (int i = 0; i < w; ++i) next += model.phi(i) * window[i];
        out.push_back(next);
        window.erase(window.begin());
        window.push_back(next);
    }
    return out;
}

struct MSSAForecast {
    std::vector<std::vector<double>> forecasts;  // aligned with the input cluster
    bool fallback = false;  // true when the shared basis was vertical and
                            // per-series models were used instead
};

namespace detail {

[[nodiscard]] inline EmbeddedCovariance pooled_covariance(const std::vector<TimeSeries>& cluster,
                                                          int L, const std::string& id) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(L, L);
    for (const auto& ts : cluster) {
        TrajectoryMatrix x = embed(ts, L);
        c.selfadjointView<Eigen::Lower>().rankUpdate(x.entries());
    }
    c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
    return {SymMatrix(std::move(c)), id, false};
}

}  // namespace detail

/// Cluster-wise MSSA: one covariance pooled over the cluster (equivalent to
/// stacking the trajectory matrices side by side, and well defined even when
/// member lengths differ), one shared recurrence, independent per-series
/// forecasts. A vertical shared eigenspace triggers a per-series univariate
/// fallback, flagged in the result.
[[nodiscard]] inline MSSAForecast mssa_forecast(const std::vector<TimeSeries>& cluster, int L,
                                                const RPolicy& policy, int horizon) {
    if (cluster.empty())
        throw std::invalid_argument("mssa_forecast: empty cluster");
    for (const auto& ts : cluster)
        if (static_cast<int>(ts.length()) < L + 1)
            throw std::invalid_argument("mssa_forecast '" + ts.id + "': length " +
                                        std::to_string(ts.length()) + " < L+1 = " +
                                        std::to_string(L + 1));

    MSSAForecast result;
    result.forecasts.reserve(cluster.size());

    SSADecomposition dec = decompose(detail::pooled_covariance(cluster, L, "cluster"), policy);
    try {
        const LRFModel shared = lrf(dec);
        for (const auto& ts : cluster) result.forecasts.push_back(forecast(ts, shared, horizon));
        return result;
    } catch (const std::runtime_error&) {
        result.fallback = true;
    }
    for (const auto& ts : cluster) {
        const LRFModel own = lrf(decompose(covariance(embed(ts, L), false), policy));
        result.forecasts.push_back(forecast(ts, own, horizon));
    }
    return result;
}

}  // namespace soem
