#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "soem/linalg.hpp"

namespace soem {

/// Raw univariate series. Invariants (length >= 2, finite values) are checked
/// at operation boundaries so the struct stays an aggregate.
struct TimeSeries {
    std::string id;
    std::vector<double> values;
    std::optional<std::string> label;

    [[nodiscard]] std::size_t length() const { return values.size(); }
};

inline void validate(const TimeSeries& ts) {
    if (ts.values.size() < 2)
        throw std::invalid_argument("TimeSeries '" + ts.id + "': length " +
                                    std::to_string(ts.values.size()) + " < 2");
    for (double v : ts.values)
        if (!std::isfinite(v))
            throw std::invalid_argument("TimeSeries '" + ts.id + "': non-finite value");
}

/// Multichannel series; channels share one length.
struct MultiSeries {
    std::string id;
    std::vector<TimeSeries> channels;
    std::optional<std::string> label;
};

inline void validate(const MultiSeries& ms) {
    if (ms.channels.empty())
        throw std::invalid_argument("MultiSeries '" + ms.id + "': no channels");
    const std::size_t n = ms.channels.front().values.size();
    for (const auto& ch : ms.channels) {
        validate(ch);
        if (ch.values.size() != n)
            throw std::invalid_argument("MultiSeries '" + ms.id + "': channel '" + ch.id +
                                        "' length " + std::to_string(ch.values.size()) +
                                        " != " + std::to_string(n));
    }
}

/// L x K Hankel matrix of lagged windows: entry(i,j) = y_{i+j} (0-based), so
/// column j is the window y_j .. y_{j+L-1}.
class TrajectoryMatrix {
public:
    TrajectoryMatrix(Eigen::MatrixXd entries, std::string source_id)
        : entries_(std::move(entries)), source_id_(std::move(source_id)) {
        if (entries_.rows() < 2 || entries_.cols() < 1)
            throw std::invalid_argument("TrajectoryMatrix: need L >= 2 and K >= 1");
        if (!entries_.allFinite())
            throw std::invalid_argument("TrajectoryMatrix: non-finite entry");
        for (Eigen::Index j = 0; j + 1 < entries_.cols(); ++j)
            for (Eigen::Index i = 1; i < entries_.rows(); ++i)
                if (entries_(i, j) != entries_(i - 1, j + 1))
                    throw std::invalid_argument("TrajectoryMatrix: Hankel structure violated at (" +
                                                std::to_string(i) + "," + std::to_string(j) + ")");
    }

    [[nodiscard]] int L() const { return static_cast<int>(entries_.rows()); }
    [[nodiscard]] int K() const { return static_cast<int>(entries_.cols()); }
    [[nodiscard]] const Eigen::MatrixXd& entries() const { return entries_; }
    [[nodiscard]] const std::string& source_id() const { return source_id_; }

private:
    Eigen::MatrixXd entries_;
    std::string source_id_;
};

/// Lag-covariance of a trajectory matrix, the SOEM input unit. PSD up to
/// rounding (eigenvalues >= -1e-10 * trace); unit Frobenius norm when
/// norm_applied.
class EmbeddedCovariance {
public:
    EmbeddedCovariance(SymMatrix matrix, std::string source_id, bool norm_applied)
        : matrix_(std::move(matrix)), source_id_(std::move(source_id)),
          norm_applied_(norm_applied) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix_.data(),
                                                          Eigen::EigenvaluesOnly);
        const double trace = matrix_.data().trace();
        if (es.eigenvalues().minCoeff() < -1e-10 * std::max(trace, 0.0))
            throw std::invalid_argument("EmbeddedCovariance '" + source_id_ +
                                        "': matrix is not positive semi-definite");
        if (norm_applied_ && std::abs(matrix_.data().norm() - 1.0) > 1e-10)
            throw std::invalid_argument("EmbeddedCovariance '" + source_id_ +
                                        "': norm_applied but Frobenius norm != 1");
    }

    [[nodiscard]] int dim() const { return matrix_.dim(); }
    [[nodiscard]] const SymMatrix& matrix() const { return matrix_; }
    [[nodiscard]] const std::string& source_id() const { return source_id_; }
    [[nodiscard]] bool norm_applied() const { return norm_applied_; }

private:
    SymMatrix matrix_;
    std::string source_id_;
    bool norm_applied_;
};

/// Time-delay embedding of a series into its trajectory matrix.
[[nodiscard]] inline TrajectoryMatrix embed(const TimeSeries& series, int L) {
    validate(series);
    const int n = static_cast<int>(series.length());
    if (L < 2 || L > n - 1)
        throw std::invalid_argument("embed: L=" + std::to_string(L) +
                                    " outside [2, N-1] for N=" + std::to_string(n));
    const int k = n - L + 1;
    Eigen::MatrixXd x(L, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < L; ++i) x(i, j) = series.values[i + j];
    return {std::move(x), series.id};
}

namespace detail {

/// X X^T through a symmetric rank update; both triangles filled, exactly equal.
inline Eigen::MatrixXd gram(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(x.rows(), x.rows());
    c.selfadjointView<Eigen::Lower>().rankUpdate(x);
    c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
    return c;
}

inline EmbeddedCovariance finalize_covariance(Eigen::MatrixXd c, std::string source_id,
                                              bool unit_norm) {
    if (unit_norm) {
        const double f = c.norm();
        if (f <= 0.0)
            throw std::invalid_argument("covariance '" + source_id +
                                        "': zero matrix, cannot normalize");
        c /= f;
    }
    return {SymMatrix(std::move(c)), std::move(source_id), unit_norm};
}

}  // namespace detail

/// Covariance X X^T of one trajectory matrix, optionally scaled to unit
/// Frobenius norm. The raw (unscaled) product is what the forecasting side
/// consumes; eigenvectors are unaffected by the scaling either way.
[[nodiscard]] inline EmbeddedCovariance covariance(const TrajectoryMatrix& x, bool unit_norm) {
    return detail::finalize_covariance(detail::gram(x.entries()), x.source_id(), unit_norm);
}

/// Stacked multichannel covariance: horizontal stacking of the per-channel
/// trajectory matrices makes the product additive, sum_m X^(m) X^(m)T, so the
/// dimension stays L regardless of channel count.
[[nodiscard]] inline EmbeddedCovariance stack_covariance(const MultiSeries& ms, int L,
                                                         bool unit_norm) {
    validate(ms);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(L, L);
    for (const auto& ch : ms.channels) {
        TrajectoryMatrix x = embed(ch, L);
        c.selfadjointView<Eigen::Lower>().rankUpdate(x.entries());
    }
    c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
    return detail::finalize_covariance(std::move(c), ms.id, unit_norm);
}

struct EmbedPolicy {
    enum class Kind { tenth, fixed, fraction };
    Kind kind = Kind::tenth;
    double value = 0.0;  // k for fixed, f for fraction; ignored for tenth
};

/// Embedding dimension under a policy: tenth -> ceil(N/10), fixed -> k,
/// fraction -> ceil(f*N). The result is always clamped into the valid range
/// [2, N-1] rather than rejected; N < 3 admits no valid L at all and throws.
[[nodiscard]] inline int default_L(int n, const EmbedPolicy& policy) {
    if (n < 3)
        throw std::invalid_argument("default_L: no valid embedding dimension for N=" +
                                    std::to_string(n));
    long l = 0;
    switch (policy.kind) {
        case EmbedPolicy::Kind::tenth:
            l = (n + 9) / 10;
            break;
        case EmbedPolicy::Kind::fixed:
            l = std::lround(policy.value);
            break;
        case EmbedPolicy::Kind::fraction:
            if (!(policy.value > 0.0))
                throw std::invalid_argument("default_L: fraction must be positive");
            // Small backoff so an exact multiple hit by rounding noise from
            // above does not ceil one step too far.
            l = static_cast<long>(std::ceil(policy.value * n - 1e-9));
            break;
    }
    return static_cast<int>(std::clamp(l, 2L, static_cast<long>(n - 1)));
}

/// Per-series z-score, offered as optional preprocessing (off by default in
/// the pipeline). Population standard deviation; constant series are rejected.
[[nodiscard]] inline TimeSeries zscore(const TimeSeries& ts) {
    validate(ts);
    const auto n = static_cast<double>(ts.values.size());
    double mean = 0.0;
    for (double v : ts.values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : ts.values) var += (v - mean) * (v - mean);
    var /= n;
    if (var <= 0.0)
        throw std::invalid_argument("zscore '" + ts.id + "': constant series has no scale");
    const double sd = std::sqrt(var);
    TimeSeries out{ts.id, {}, ts.label};
    out.values.reserve(ts.values.size());
    for (double v : ts.values) out.values.push_back((v - mean) / sd);
    return out;
}

}  // namespace soem
