#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "edgeimpute/correlation.hpp"
#include "edgeimpute/error.hpp"
#include "edgeimpute/stream_core.hpp"

namespace edgeimpute
{

enum class Model
{
    pbm,
    dbm,
    am,
};

enum class SigmaMode
{
    absolute,
    relative,
};

enum class WgmWeighting
{
    inverse,
    literal,
};

enum class LocalMethod
{
    lagged_ols,
    linear_trend,
    last_value,
};

constexpr std::string_view to_string(Model m) noexcept
{
    switch (m)
    {
        case Model::pbm: return "PBM";
        case Model::dbm: return "DBM";
        case Model::am: return "AM";
    }
    return "?";
}

constexpr std::string_view to_string(SigmaMode m) noexcept
{
    return m == SigmaMode::absolute ? "absolute" : "relative";
}

constexpr std::string_view to_string(WgmWeighting m) noexcept
{
    return m == WgmWeighting::inverse ? "inverse" : "literal";
}

constexpr std::string_view to_string(LocalMethod m) noexcept
{
    switch (m)
    {
        case LocalMethod::lagged_ols: return "lagged_ols";
        case LocalMethod::linear_trend: return "linear_trend";
        case LocalMethod::last_value: return "last_value";
    }
    return "?";
}

constexpr std::string_view to_string(MdMode m) noexcept
{
    return m == MdMode::mean ? "mean" : "tick_sum";
}

struct LocalEstimate
{
    double value{0.0};
    double sigma{0.0};
    LocalMethod method{LocalMethod::last_value};
};

struct BlendParams
{
    double alpha{20.0};
    double beta{2.0};
    std::size_t k{4};
    double epsilon_md{1e-9};
    double ridge{1e-6};
    std::size_t ar_order{3};
    SigmaMode sigma_mode{SigmaMode::relative};
    WgmWeighting wgm_weighting{WgmWeighting::inverse};
    bool cs_clamp{true};
    MdMode md_mode{MdMode::mean};

    CorrelationParams correlation() const
    {
        CorrelationParams p;
        p.epsilon_md = epsilon_md;
        p.ridge_scale = ridge;
        p.cs_clamp = cs_clamp;
        p.md_mode = md_mode;
        return p;
    }
};

struct ImputationOutcome
{
    Model model{Model::pbm};
    double pd{0.0};
    std::optional<LocalEstimate> local;
    std::optional<double> wgm;
    double w_local{0.0};
    // The deviation actually fed to the sigmoid (after sigma_mode).
    double sigma_used{0.0};
    PeerGroup group;
    std::chrono::nanoseconds elapsed{0};
};

namespace detail
{

inline double sample_stddev(std::span<const double> v)
{
    if (v.size() < 2)
        return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

} // namespace detail

// Forecast of the slice's dimension at `target_position` (default: the
// position right after the newest stored value).
//
// Tier 1 fits x[t] = b0 + b1 x[t-p] + ... + bp x[t-1] by least squares over
// every fully observed lag row in the window and rolls the recurrence forward
// to the target. It needs p+2 rows and an unbroken tail of p values. Tier 2 is
// a straight-line fit over positions, used from three points upward. Below
// that the newest value is carried forward.
inline LocalEstimate local_regress(const StreamSlice& slice, std::size_t order = 3,
                                   std::optional<std::size_t> target_position = std::nullopt)
{
    if (slice.empty())
        throw Error(ErrorCode::no_local_data, "no observed values for device " +
                                                  std::to_string(slice.device) + " dimension " +
                                                  std::to_string(slice.dimension));
    if (order == 0)
        throw Error(ErrorCode::config, "embedding order must be at least 1");
    if (slice.values.size() != slice.positions.size())
        throw Error(ErrorCode::bounds, "slice values and positions differ in length");

    const std::size_t last = slice.positions.back();
    const std::size_t target = target_position.value_or(last + 1);
    if (target <= last)
        throw Error(ErrorCode::precondition, "forecast position must follow the newest observation");

    LocalEstimate est;
    est.sigma = detail::sample_stddev(slice.values);
    const std::size_t n = slice.values.size();
    if (n < 3)
    {
        est.value = slice.values.back();
        est.method = LocalMethod::last_value;
        return est;
    }

    std::vector<std::optional<double>> dense(last + 1);
    for (std::size_t i = 0; i < n; ++i)
        dense[slice.positions[i]] = slice.values[i];

    std::vector<std::size_t> row_ends;
    for (std::size_t t = order; t <= last; ++t)
    {
        bool full = true;
        for (std::size_t q = t - order; q <= t && full; ++q)
            full = dense[q].has_value();
        if (full)
            row_ends.push_back(t);
    }
    bool tail_ok = last + 1 >= order;
    for (std::size_t q = last + 1 - std::min(order, last + 1); q <= last && tail_ok; ++q)
        tail_ok = dense[q].has_value();

    if (tail_ok && row_ends.size() >= order + 2)
    {
        const auto rows = static_cast<Eigen::Index>(row_ends.size());
        const auto cols = static_cast<Eigen::Index>(order + 1);
        Eigen::MatrixXd x(rows, cols);
        Eigen::VectorXd y(rows);
        for (Eigen::Index r = 0; r < rows; ++r)
        {
            const std::size_t t = row_ends[static_cast<std::size_t>(r)];
            x(r, 0) = 1.0;
            for (std::size_t lag = 0; lag < order; ++lag)
                x(r, static_cast<Eigen::Index>(lag + 1)) = *dense[t - order + lag];
            y[r] = *dense[t];
        }
        const Eigen::VectorXd b = x.completeOrthogonalDecomposition().solve(y);

        std::vector<double> lags(order);
        for (std::size_t lag = 0; lag < order; ++lag)
            lags[lag] = *dense[last + 1 - order + lag];
        double next = 0.0;
        for (std::size_t pos = last + 1; pos <= target; ++pos)
        {
            next = b[0];
            for (std::size_t lag = 0; lag < order; ++lag)
                next += b[static_cast<Eigen::Index>(lag + 1)] * lags[lag];
            lags.erase(lags.begin());
            lags.push_back(next);
        }
        if (std::isfinite(next))
        {
            est.value = next;
            est.method = LocalMethod::lagged_ols;
            return est;
        }
    }

    double mean_t = 0.0;
    double mean_x = 0.0;
    for (std::size_t i = 0; i < n; ++i)
    {
        mean_t += static_cast<double>(slice.positions[i]);
        mean_x += slice.values[i];
    }
    mean_t /= static_cast<double>(n);
    mean_x /= static_cast<double>(n);
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
    {
        const double dt = static_cast<double>(slice.positions[i]) - mean_t;
        sxx += dt * dt;
        sxy += dt * (slice.values[i] - mean_x);
    }
    const double slope = sxy / sxx;
    est.value = mean_x + slope * (static_cast<double>(target) - mean_t);
    est.method = LocalMethod::linear_trend;
    return est;
}

// (prod v_i^w_i)^(1 / sum w_i), evaluated as exp(sum w_i ln v_i / sum w_i).
inline double weighted_geometric_mean(std::span<const double> values, std::span<const double> weights)
{
    if (values.empty() || values.size() != weights.size())
        throw Error(ErrorCode::bounds, "values and weights must be nonempty and of equal length");
    double wsum = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
    {
        if (!(values[i] > 0.0))
            throw Error(ErrorCode::domain, "geometric mean needs positive values");
        if (!(weights[i] >= 0.0))
            throw Error(ErrorCode::degenerate_weights, "weights must be nonnegative");
        wsum += weights[i];
        acc += weights[i] * std::log(values[i]);
    }
    if (!(wsum > 0.0))
        throw Error(ErrorCode::degenerate_weights, "weights sum to zero");
    return std::exp(acc / wsum);
}

// Group view: WGM of the members' latest values in `dimension`. Members whose
// latest value there is masked are dropped. Inputs that are not all positive
// are shifted by |min| + 1 before averaging and shifted back afterwards.
inline std::optional<double> group_estimate(const PeerGroup& group, const WindowStore& store,
                                            std::size_t dimension,
                                            WgmWeighting weighting = WgmWeighting::inverse,
                                            double epsilon_md = 1e-9)
{
    std::vector<double> values;
    std::vector<double> weights;
    for (const auto& member : group.members)
    {
        const auto v = store.latest(member.peer).value(dimension);
        if (!v)
            continue;
        values.push_back(*v);
        weights.push_back(weighting == WgmWeighting::inverse ? 1.0 / std::max(member.md, epsilon_md)
                                                             : member.md);
    }
    if (values.empty())
        return std::nullopt;

    // Literal weighting degenerates when every distance is zero; fall back to
    // an unweighted geometric mean.
    if (std::accumulate(weights.begin(), weights.end(), 0.0) <= 0.0)
        std::fill(weights.begin(), weights.end(), 1.0);

    const double lo = *std::min_element(values.begin(), values.end());
    const double shift = lo > 0.0 ? 0.0 : std::abs(lo) + 1.0;
    if (shift != 0.0)
        for (double& v : values)
            v += shift;
    return weighted_geometric_mean(values, weights) - shift;
}

// 1 / (1 + e^(alpha*sigma - beta))
inline double local_weight(double sigma, double alpha, double beta)
{
    if (sigma < 0.0)
        throw Error(ErrorCode::domain, "deviation must be nonnegative");
    return 1.0 / (1.0 + std::exp(std::fma(alpha, sigma, -beta)));
}

inline double local_weight(double sigma, const BlendParams& params)
{
    return local_weight(sigma, params.alpha, params.beta);
}

// w*local + (1-w)*group, clamped to [min(local, group), max(local, group)]
// against a one-ulp rounding overshoot.
inline double blend(double w_local, double local, double group)
{
    const double pd = w_local * local + (1.0 - w_local) * group;
    return std::clamp(pd, std::min(local, group), std::max(local, group));
}

namespace detail
{

inline double effective_sigma(const StreamSlice& slice, double sigma, SigmaMode mode)
{
    if (mode == SigmaMode::absolute || slice.empty())
        return sigma;
    const double mean =
        std::accumulate(slice.values.begin(), slice.values.end(), 0.0) / static_cast<double>(slice.size());
    const double scale = std::abs(mean);
    return scale > 0.0 ? sigma / scale : sigma;
}

inline DimSet masked_dims(const DeviceReport& report)
{
    DimSet dims;
    for (std::size_t d = 0; d < report.dims(); ++d)
        if (report.is_missing(d))
            dims.push_back(d);
    return dims;
}

inline const DeviceReport& require_masked(const WindowStore& store, DeviceId target, std::size_t dimension)
{
    const DeviceReport& latest = store.latest(target);
    if (dimension >= latest.dims())
        throw Error(ErrorCode::bounds, "dimension out of range");
    if (!latest.is_missing(dimension))
        throw Error(ErrorCode::precondition, "device " + std::to_string(target) + " dimension " +
                                                 std::to_string(dimension) + " is not missing");
    return latest;
}

inline std::string impossible_message(DeviceId target, std::size_t dimension, std::string_view why)
{
    return "cannot impute device " + std::to_string(target) + " dimension " + std::to_string(dimension) +
           ": " + std::string(why);
}

class Stopwatch
{
  public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    std::chrono::nanoseconds elapsed() const
    {
        return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start_);
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

} // namespace detail

// Local and group views blended by the deviation-driven sigmoid weight.
inline ImputationOutcome impute_pbm(const WindowStore& store, DeviceId target, std::size_t dimension,
                                   const BlendParams& params = {})
{
    const detail::Stopwatch watch;
    const DeviceReport& latest = detail::require_masked(store, target, dimension);

    ImputationOutcome out;
    out.model = Model::pbm;
    out.group = select_peers(store, target, detail::masked_dims(latest), params.k, params.correlation());
    out.wgm = group_estimate(out.group, store, dimension, params.wgm_weighting, params.epsilon_md);

    const StreamSlice slice = store.window(target, dimension);
    if (!slice.empty())
    {
        out.local = local_regress(slice, params.ar_order, slice.span - 1);
        out.sigma_used = detail::effective_sigma(slice, out.local->sigma, params.sigma_mode);
    }

    if (out.local && out.wgm)
    {
        out.w_local = local_weight(out.sigma_used, params);
        out.pd = blend(out.w_local, out.local->value, *out.wgm);
    }
    else if (out.local)
    {
        out.w_local = 1.0;
        out.pd = out.local->value;
    }
    else if (out.wgm)
    {
        out.w_local = 0.0;
        out.pd = *out.wgm;
    }
    else
    {
        throw Error(ErrorCode::imputation_impossible,
                    detail::impossible_message(target, dimension, "no peers and no local history"));
    }
    out.elapsed = watch.elapsed();
    return out;
}

// Group-only ensemble: the blend with the local view switched off.
inline ImputationOutcome impute_dbm(const WindowStore& store, DeviceId target, std::size_t dimension,
                                   const BlendParams& params = {})
{
    const detail::Stopwatch watch;
    const DeviceReport& latest = detail::require_masked(store, target, dimension);

    ImputationOutcome out;
    out.model = Model::dbm;
    out.group = select_peers(store, target, detail::masked_dims(latest), params.k, params.correlation());
    out.wgm = group_estimate(out.group, store, dimension, params.wgm_weighting, params.epsilon_md);
    if (!out.wgm)
        throw Error(ErrorCode::imputation_impossible,
                    detail::impossible_message(target, dimension, "no qualifying peers"));
    out.w_local = 0.0;
    out.pd = *out.wgm;
    out.elapsed = watch.elapsed();
    return out;
}

// Arithmetic mean over the same top-k peer group.
inline ImputationOutcome impute_am(const WindowStore& store, DeviceId target, std::size_t dimension,
                                  const BlendParams& params = {})
{
    const detail::Stopwatch watch;
    const DeviceReport& latest = detail::require_masked(store, target, dimension);

    ImputationOutcome out;
    out.model = Model::am;
    out.group = select_peers(store, target, detail::masked_dims(latest), params.k, params.correlation());
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& member : out.group.members)
    {
        if (const auto v = store.latest(member.peer).value(dimension))
        {
            sum += *v;
            ++count;
        }
    }
    if (count == 0)
        throw Error(ErrorCode::imputation_impossible,
                    detail::impossible_message(target, dimension, "no qualifying peers"));
    out.w_local = 0.0;
    out.pd = sum / static_cast<double>(count);
    out.elapsed = watch.elapsed();
    return out;
}

inline ImputationOutcome impute(Model model, const WindowStore& store, DeviceId target, std::size_t dimension,
                                const BlendParams& params = {})
{
    switch (model)
    {
        case Model::pbm: return impute_pbm(store, target, dimension, params);
        case Model::dbm: return impute_dbm(store, target, dimension, params);
        case Model::am: return impute_am(store, target, dimension, params);
    }
    throw Error(ErrorCode::config, "unknown model");
}

} // namespace edgeimpute
