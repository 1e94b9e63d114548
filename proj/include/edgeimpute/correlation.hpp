#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "edgeimpute/error.hpp"
#include "edgeimpute/stream_core.hpp"

namespace edgeimpute
{

using DimSet = std::vector<std::size_t>;

// How the device-level distance treats the two windows.
//   mean     - distance between the per-dimension window means
//   tick_sum - sum of distances between rows paired newest-to-newest
enum class MdMode
{
    mean,
    tick_sum,
};

struct CorrelationParams
{
    double epsilon_md{1e-9};
    // Ridge added to the pooled covariance: max(ridge_scale * mean diagonal, ridge_floor).
    double ridge_scale{1e-6};
    double ridge_floor{1e-12};
    bool cs_clamp{true};
    MdMode md_mode{MdMode::mean};
};

struct CorrelationResult
{
    DeviceId peer{0};
    double cs{0.0};
    double md{0.0};
    double f_c{0.0};
    DimSet dims_used;
};

// Members sorted by f_c descending, ties by ascending peer id.
struct PeerGroup
{
    DeviceId target{0};
    std::vector<CorrelationResult> members;

    bool empty() const noexcept { return members.empty(); }
    std::size_t size() const noexcept { return members.size(); }
};

// Cosine of the angle between a and b restricted to `dims`. A zero vector
// against a nonzero one scores 0; negative cosines clamp to 0 unless `clamp`
// is off.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b,
                                const DimSet& dims, bool clamp = true)
{
    if (dims.empty())
        throw Error(ErrorCode::insufficient_overlap, "cosine similarity over an empty dimension set");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t d : dims)
    {
        if (d >= a.size() || d >= b.size())
            throw Error(ErrorCode::bounds, "dimension out of range in cosine similarity");
        dot += a[d] * b[d];
        na += a[d] * a[d];
        nb += b[d] * b[d];
    }
    if (na == 0.0 && nb == 0.0)
        throw Error(ErrorCode::undefined_similarity, "cosine similarity of two zero vectors");
    if (na == 0.0 || nb == 0.0)
        return 0.0;
    double cs = dot / (std::sqrt(na) * std::sqrt(nb));
    cs = std::clamp(cs, -1.0, 1.0);
    return clamp ? std::max(cs, 0.0) : cs;
}

// Cholesky-factored covariance reused across many distance evaluations.
class MahalanobisMetric
{
  public:
    explicit MahalanobisMetric(const Eigen::MatrixXd& cov) : dim_(cov.rows())
    {
        if (cov.rows() != cov.cols() || cov.rows() == 0)
            throw Error(ErrorCode::bounds, "covariance must be a nonempty square matrix");
        llt_.compute(cov);
        if (llt_.info() != Eigen::Success)
            throw Error(ErrorCode::singular_covariance, "covariance is not positive definite");
    }

    double distance(std::span<const double> x, std::span<const double> y) const
    {
        if (static_cast<Eigen::Index>(x.size()) != dim_ || static_cast<Eigen::Index>(y.size()) != dim_)
            throw Error(ErrorCode::bounds, "vector length does not match covariance");
        Eigen::VectorXd diff(dim_);
        for (Eigen::Index l = 0; l < dim_; ++l)
            diff[l] = x[l] - y[l];
        if (diff.isZero(0.0))
            return 0.0;
        // (x-y)^T S^-1 (x-y) = |L^-1 (x-y)|^2 with S = L L^T
        const Eigen::VectorXd z = llt_.matrixL().solve(diff);
        const double d = z.norm();
        if (!std::isfinite(d))
            throw Error(ErrorCode::singular_covariance, "covariance is numerically singular");
        return d;
    }

  private:
    Eigen::Index dim_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline double mahalanobis(std::span<const double> x, std::span<const double> y,
                          const Eigen::MatrixXd& cov)
{
    return MahalanobisMetric(cov).distance(x, y);
}

// Rows of the device's window that are unmasked on every dimension in `dims`,
// oldest first, one column per entry of `dims`.
inline Eigen::MatrixXd usable_rows(const WindowStore& store, DeviceId device, const DimSet& dims)
{
    const auto& buf = store.buffer(device);
    std::vector<const DeviceReport*> keep;
    keep.reserve(buf.size());
    for (const auto& report : buf)
    {
        bool ok = true;
        for (std::size_t d : dims)
        {
            if (d >= report.dims())
                throw Error(ErrorCode::bounds, "dimension out of range");
            if (report.is_missing(d))
            {
                ok = false;
                break;
            }
        }
        if (ok)
            keep.push_back(&report);
    }
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(dims.size()));
    for (std::size_t r = 0; r < keep.size(); ++r)
        for (std::size_t c = 0; c < dims.size(); ++c)
            rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = keep[r]->raw(dims[c]);
    return rows;
}

// Pooled covariance of two windows: each window is centred on its own mean,
// the scatter matrices are summed and divided by (n_a + n_b - 1), and the
// ridge max(ridge_scale * mean diagonal, ridge_floor) is added. The gap
// between the two window means never enters S.
inline Eigen::MatrixXd pooled_covariance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                         const CorrelationParams& params = {})
{
    if (a.cols() != b.cols())
        throw Error(ErrorCode::bounds, "windows differ in dimensionality");
    if (a.rows() < 2 || b.rows() < 2)
        throw Error(ErrorCode::insufficient_history, "covariance needs two rows per window");
    const Eigen::MatrixXd ca = a.rowwise() - a.colwise().mean();
    const Eigen::MatrixXd cb = b.rowwise() - b.colwise().mean();
    Eigen::MatrixXd cov = (ca.transpose() * ca + cb.transpose() * cb) / static_cast<double>(a.rows() + b.rows() - 1);
    const double mean_diag = cov.diagonal().mean();
    const double ridge = std::max(params.ridge_scale * mean_diag, params.ridge_floor);
    cov.diagonal().array() += ridge;
    return cov;
}

namespace detail
{

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> pair_rows(const WindowStore& store, DeviceId i, DeviceId j,
                                                             const DimSet& dims)
{
    if (dims.empty())
        throw Error(ErrorCode::insufficient_overlap, "empty dimension set");
    Eigen::MatrixXd rows_i = usable_rows(store, i, dims);
    Eigen::MatrixXd rows_j = usable_rows(store, j, dims);
    if (rows_i.rows() < 2 || rows_j.rows() < 2)
        throw Error(ErrorCode::insufficient_history,
                    "devices " + std::to_string(i) + " and " + std::to_string(j) +
                        " need two usable reports each");
    return {std::move(rows_i), std::move(rows_j)};
}

} // namespace detail

inline Eigen::MatrixXd estimate_covariance(const WindowStore& store, DeviceId i, DeviceId j,
                                           const DimSet& dims, const CorrelationParams& params = {})
{
    const auto [rows_i, rows_j] = detail::pair_rows(store, i, j, dims);
    return pooled_covariance(rows_i, rows_j, params);
}

inline double device_md(const WindowStore& store, DeviceId target, DeviceId peer, const DimSet& dims,
                        const CorrelationParams& params = {})
{
    const auto [rows_t, rows_p] = detail::pair_rows(store, target, peer, dims);
    const MahalanobisMetric metric(pooled_covariance(rows_t, rows_p, params));

    if (params.md_mode == MdMode::mean)
    {
        const Eigen::VectorXd mt = rows_t.colwise().mean().transpose();
        const Eigen::VectorXd mp = rows_p.colwise().mean().transpose();
        return metric.distance({mt.data(), static_cast<std::size_t>(mt.size())},
                               {mp.data(), static_cast<std::size_t>(mp.size())});
    }

    const Eigen::Index pairs = std::min(rows_t.rows(), rows_p.rows());
    double total = 0.0;
    for (Eigen::Index q = 1; q <= pairs; ++q)
    {
        const Eigen::VectorXd a = rows_t.row(rows_t.rows() - q).transpose();
        const Eigen::VectorXd b = rows_p.row(rows_p.rows() - q).transpose();
        total += metric.distance({a.data(), static_cast<std::size_t>(a.size())},
                                 {b.data(), static_cast<std::size_t>(b.size())});
    }
    return total;
}

inline double ensemble_score(double cs, double md, double epsilon)
{
    return cs / std::max(md, epsilon);
}

inline bool ranks_before(const CorrelationResult& a, const CorrelationResult& b)
{
    if (a.f_c != b.f_c)
        return a.f_c > b.f_c;
    return a.peer < b.peer;
}

// Scores every other device against the target's latest report and keeps the
// top k. Peers whose latest vector shares no usable dimension with the target,
// or whose history is too short for a covariance, do not qualify.
inline PeerGroup select_peers(const WindowStore& store, DeviceId target, const DimSet& missing_dims,
                              std::size_t k, const CorrelationParams& params = {})
{
    if (k == 0)
        throw Error(ErrorCode::config, "k must be at least 1");
    const DeviceReport& mine = store.latest(target);

    DimSet base;
    for (std::size_t d = 0; d < mine.dims(); ++d)
    {
        if (mine.is_missing(d))
            continue;
        if (std::find(missing_dims.begin(), missing_dims.end(), d) != missing_dims.end())
            continue;
        base.push_back(d);
    }

    PeerGroup group;
    group.target = target;
    if (base.empty())
        return group;

    std::vector<double> a(mine.dims());
    for (std::size_t d : base)
        a[d] = mine.raw(d);

    for (DeviceId peer : store.devices())
    {
        if (peer == target)
            continue;
        const DeviceReport& theirs = store.latest(peer);
        DimSet dims;
        for (std::size_t d : base)
            if (!theirs.is_missing(d))
                dims.push_back(d);
        if (dims.empty())
            continue;

        std::vector<double> b(theirs.dims());
        for (std::size_t d : dims)
            b[d] = theirs.raw(d);

        CorrelationResult result;
        result.peer = peer;
        try
        {
            result.cs = cosine_similarity(a, b, dims, params.cs_clamp);
            result.md = device_md(store, target, peer, dims, params);
        }
        catch (const Error& e)
        {
            switch (e.code())
            {
                case ErrorCode::undefined_similarity:
                case ErrorCode::insufficient_history:
                case ErrorCode::singular_covariance:
                    continue;
                default:
                    throw;
            }
        }
        result.f_c = ensemble_score(result.cs, result.md, params.epsilon_md);
        result.dims_used = std::move(dims);
        group.members.push_back(std::move(result));
    }

    std::sort(group.members.begin(), group.members.end(), ranks_before);
    if (group.members.size() > k)
        group.members.resize(k);
    return group;
}

} // namespace edgeimpute
