#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edgeimpute/error.hpp"
#include "edgeimpute/imputation.hpp"
#include "edgeimpute/ingestion.hpp"
#include "edgeimpute/keyvalue.hpp"
#include "edgeimpute/stream_core.hpp"

namespace edgeimpute
{

inline double mae(std::span<const double> predicted, std::span<const double> actual)
{
    if (predicted.empty() || predicted.size() != actual.size())
        throw Error(ErrorCode::undefined_metric, "MAE needs two nonempty sequences of equal length");
    double sum = 0.0;
    for (std::size_t l = 0; l < predicted.size(); ++l)
        sum += std::abs(predicted[l] - actual[l]);
    return sum / static_cast<double>(predicted.size());
}

inline double rmse(std::span<const double> predicted, std::span<const double> actual)
{
    if (predicted.empty() || predicted.size() != actual.size())
        throw Error(ErrorCode::undefined_metric, "RMSE needs two nonempty sequences of equal length");
    double sum = 0.0;
    for (std::size_t l = 0; l < predicted.size(); ++l)
    {
        const double e = predicted[l] - actual[l];
        sum += e * e;
    }
    return std::sqrt(sum / static_cast<double>(predicted.size()));
}

// What re-enters the window after a masked cell has been scored.
enum class Feed
{
    truth,
    imputed,
};

constexpr std::string_view to_string(Feed f) noexcept
{
    return f == Feed::truth ? "truth" : "imputed";
}

inline Model parse_model(std::string_view s)
{
    if (s == "PBM" || s == "pbm")
        return Model::pbm;
    if (s == "DBM" || s == "dbm")
        return Model::dbm;
    if (s == "AM" || s == "am")
        return Model::am;
    throw Error(ErrorCode::config, "unknown model '" + std::string(s) + "'");
}

inline SigmaMode parse_sigma_mode(std::string_view s)
{
    if (s == "absolute")
        return SigmaMode::absolute;
    if (s == "relative")
        return SigmaMode::relative;
    throw Error(ErrorCode::config, "sigma_mode must be absolute or relative, got '" + std::string(s) + "'");
}

inline WgmWeighting parse_wgm_weighting(std::string_view s)
{
    if (s == "inverse")
        return WgmWeighting::inverse;
    if (s == "literal")
        return WgmWeighting::literal;
    throw Error(ErrorCode::config, "wgm_weighting must be inverse or literal, got '" + std::string(s) + "'");
}

inline MdMode parse_md_mode(std::string_view s)
{
    if (s == "mean")
        return MdMode::mean;
    if (s == "tick_sum")
        return MdMode::tick_sum;
    throw Error(ErrorCode::config, "md_mode must be mean or tick_sum, got '" + std::string(s) + "'");
}

inline Feed parse_feed(std::string_view s)
{
    if (s == "truth")
        return Feed::truth;
    if (s == "imputed")
        return Feed::imputed;
    throw Error(ErrorCode::config, "feed must be truth or imputed, got '" + std::string(s) + "'");
}

inline InjectionUnit parse_unit(std::string_view s)
{
    if (s == "cell")
        return InjectionUnit::cell;
    if (s == "vector")
        return InjectionUnit::vector;
    throw Error(ErrorCode::config, "unit must be cell or vector, got '" + std::string(s) + "'");
}

struct ExperimentConfig
{
    Model model{Model::pbm};
    double missing_pct{5.0}; // V
    std::size_t window{10};  // W
    std::size_t devices{5};  // N
    std::size_t dims{4};     // M
    BlendParams blend;       // alpha, beta, k and the estimator switches
    Feed feed{Feed::truth};
    InjectionUnit unit{InjectionUnit::cell};
    std::vector<std::uint64_t> seeds{1};

    void validate() const
    {
        if (!(missing_pct >= 0.0 && missing_pct < 100.0))
            throw Error(ErrorCode::config, "V must lie in [0, 100), got " + format_double(missing_pct));
        if (window < 2)
            throw Error(ErrorCode::config, "W must be at least 2");
        if (blend.k < 1 || blend.k >= devices)
            throw Error(ErrorCode::config, "k must satisfy 1 <= k < N (k=" + std::to_string(blend.k) +
                                               ", N=" + std::to_string(devices) + ")");
        if (dims < 1)
            throw Error(ErrorCode::config, "M must be at least 1");
        if (!(blend.alpha > 0.0) || !std::isfinite(blend.beta))
            throw Error(ErrorCode::config, "alpha must be positive and beta finite");
        if (!(blend.epsilon_md > 0.0) || !(blend.ridge >= 0.0) || blend.ar_order < 1)
            throw Error(ErrorCode::config, "epsilon_md > 0, ridge >= 0 and ar_order >= 1 are required");
        if (seeds.empty())
            throw Error(ErrorCode::config, "at least one seed is required");
    }

    std::string label() const
    {
        return std::string(to_string(model)) + " V=" + format_double(missing_pct) + " N=" + std::to_string(devices) +
               " M=" + std::to_string(dims);
    }

    KeyValues to_kv() const
    {
        KeyValues kv;
        kv.set("model", std::string(to_string(model)));
        kv.set("V", format_double(missing_pct));
        kv.set("W", std::to_string(window));
        kv.set("k", std::to_string(blend.k));
        kv.set("N", std::to_string(devices));
        kv.set("M", std::to_string(dims));
        write_shared(kv);
        return kv;
    }

    // Keys shared by single configs and grids (everything except the grid axes).
    void write_shared(KeyValues& kv) const
    {
        kv.set("alpha", format_double(blend.alpha));
        kv.set("beta", format_double(blend.beta));
        kv.set("epsilon_md", format_double(blend.epsilon_md));
        kv.set("ridge", format_double(blend.ridge));
        kv.set("ar_order", std::to_string(blend.ar_order));
        kv.set("sigma_mode", std::string(to_string(blend.sigma_mode)));
        kv.set("wgm_weighting", std::string(to_string(blend.wgm_weighting)));
        kv.set("md_mode", std::string(to_string(blend.md_mode)));
        kv.set("cs_clamp", blend.cs_clamp ? "on" : "off");
        kv.set("feed", std::string(to_string(feed)));
        kv.set("unit", std::string(to_string(unit)));
        std::string s;
        for (std::size_t i = 0; i < seeds.size(); ++i)
            s += (i ? "," : "") + std::to_string(seeds[i]);
        kv.set("seeds", s);
    }

    void read_shared(const KeyValues& kv)
    {
        auto num = [&](const char* key, double& dst) {
            if (auto v = kv.get(key))
            {
                auto d = parse_double(*v);
                if (!d)
                    throw Error(ErrorCode::config, std::string(key) + ": '" + *v + "' is not a number");
                dst = *d;
            }
        };
        auto count = [&](const char* key, std::size_t& dst) {
            if (auto v = kv.get(key))
            {
                auto d = parse_int<std::size_t>(*v);
                if (!d)
                    throw Error(ErrorCode::config, std::string(key) + ": '" + *v + "' is not a count");
                dst = *d;
            }
        };
        num("alpha", blend.alpha);
        num("beta", blend.beta);
        num("epsilon_md", blend.epsilon_md);
        num("ridge", blend.ridge);
        count("W", window);
        count("k", blend.k);
        count("ar_order", blend.ar_order);
        if (auto v = kv.get("sigma_mode"))
            blend.sigma_mode = parse_sigma_mode(*v);
        if (auto v = kv.get("wgm_weighting"))
            blend.wgm_weighting = parse_wgm_weighting(*v);
        if (auto v = kv.get("md_mode"))
            blend.md_mode = parse_md_mode(*v);
        if (auto v = kv.get("cs_clamp"))
        {
            if (*v == "on" || *v == "true")
                blend.cs_clamp = true;
            else if (*v == "off" || *v == "false")
                blend.cs_clamp = false;
            else
                throw Error(ErrorCode::config, "cs_clamp must be on or off, got '" + *v + "'");
        }
        if (auto v = kv.get("feed"))
            feed = parse_feed(*v);
        if (auto v = kv.get("unit"))
            unit = parse_unit(*v);
        if (auto v = kv.get("seeds"))
        {
            seeds.clear();
            for (const auto& s : split_list(*v))
            {
                auto seed = parse_int<std::uint64_t>(s);
                if (!seed)
                    throw Error(ErrorCode::config, "seeds: '" + s + "' is not an unsigned integer");
                seeds.push_back(*seed);
            }
        }
    }

    static ExperimentConfig from_kv(const KeyValues& kv)
    {
        static const std::vector<std::string> known{"model", "V", "W", "k", "N", "M", "alpha", "beta",
                                                    "epsilon_md", "ridge", "ar_order", "sigma_mode",
                                                    "wgm_weighting", "md_mode", "cs_clamp", "feed", "unit",
                                                    "seeds"};
        for (const auto& [k, v] : kv.entries())
            if (std::find(known.begin(), known.end(), k) == known.end())
                throw Error(ErrorCode::config, "unknown config key '" + k + "'");

        ExperimentConfig c;
        if (auto v = kv.get("model"))
            c.model = parse_model(*v);
        if (auto v = kv.get("V"))
        {
            auto d = parse_double(*v);
            if (!d)
                throw Error(ErrorCode::config, "V: '" + *v + "' is not a number");
            c.missing_pct = *d;
        }
        auto count = [&](const char* key, std::size_t& dst) {
            if (auto v = kv.get(key))
            {
                auto d = parse_int<std::size_t>(*v);
                if (!d)
                    throw Error(ErrorCode::config, std::string(key) + ": '" + *v + "' is not a count");
                dst = *d;
            }
        };
        count("N", c.devices);
        count("M", c.dims);
        c.read_shared(kv);
        c.validate();
        return c;
    }
};

struct SeedMetrics
{
    std::uint64_t seed{0};
    std::size_t masked{0};
    std::size_t replacements{0};
    std::size_t failures{0};
    std::optional<double> mae;
    std::optional<double> rmse;
    std::chrono::nanoseconds total_time{0};
};

struct MetricsReport
{
    ExperimentConfig config;
    std::size_t masked{0};
    std::size_t replacements{0};
    std::size_t failures{0};
    // Absent when nothing was replaced.
    std::optional<double> mae;
    std::optional<double> rmse;
    std::chrono::nanoseconds total_time{0};
    std::vector<SeedMetrics> per_seed;

    double mean_time_ms() const
    {
        if (replacements == 0)
            return 0.0;
        return std::chrono::duration<double, std::milli>(total_time).count() / static_cast<double>(replacements);
    }
};

// Called once per scored cell with the cell's ground truth and the outcome.
using OutcomeObserver = std::function<void(const MaskedCell&, const ImputationOutcome&)>;

namespace detail
{

inline SeedMetrics replay_seed(const Trace& trace, const ExperimentConfig& cfg, std::uint64_t seed,
                               const OutcomeObserver& observer, std::vector<double>& all_pred,
                               std::vector<double>& all_truth)
{
    SeedMetrics m;
    m.seed = seed;

    Trace masked;
    InjectionPlan plan;
    if (cfg.missing_pct > 0.0)
    {
        InjectionOptions opts;
        opts.rate = cfg.missing_pct;
        opts.seed = seed;
        opts.unit = cfg.unit;
        opts.warmup = cfg.window;
        std::tie(masked, plan) = inject_missing(trace, opts);
    }
    else
    {
        masked = trace;
    }
    m.masked = plan.cells.size();

    std::map<std::pair<DeviceId, Tick>, std::vector<const MaskedCell*>> pending;
    for (const auto& c : plan.cells)
        pending[{c.device, c.tick}].push_back(&c);

    std::vector<std::pair<Tick, const DeviceReport*>> order;
    for (const auto& dev : masked.devices)
        for (const auto& r : dev)
            order.emplace_back(r.timestamp(), &r);
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first < b.first;
        return a.second->device() < b.second->device();
    });

    std::vector<double> pred;
    std::vector<double> truth;
    WindowStore store(cfg.window);
    struct Fill
    {
        DeviceId device;
        std::size_t dim;
        double value;
    };
    std::vector<Fill> fills;

    std::size_t i = 0;
    while (i < order.size())
    {
        const Tick tick = order[i].first;
        std::size_t end = i;
        while (end < order.size() && order[end].first == tick)
            store.ingest(*order[end++].second);

        // Every imputation at this tick sees the same store state; scored
        // values re-enter the window only after the whole tick is done.
        fills.clear();
        for (std::size_t r = i; r < end; ++r)
        {
            const DeviceId dev = order[r].second->device();
            auto it = pending.find({dev, tick});
            if (it == pending.end())
                continue;
            for (const MaskedCell* cell : it->second)
            {
                try
                {
                    const ImputationOutcome out = impute(cfg.model, store, dev, cell->dimension, cfg.blend);
                    pred.push_back(out.pd);
                    truth.push_back(cell->truth);
                    m.total_time += out.elapsed;
                    ++m.replacements;
                    if (observer)
                        observer(*cell, out);
                    fills.push_back({dev, cell->dimension, cfg.feed == Feed::truth ? cell->truth : out.pd});
                }
                catch (const Error& e)
                {
                    if (e.code() != ErrorCode::imputation_impossible)
                        throw;
                    ++m.failures;
                    if (cfg.feed == Feed::truth)
                        fills.push_back({dev, cell->dimension, cell->truth});
                }
            }
        }
        for (const Fill& f : fills)
            store.replace_latest(store.latest(f.device).with_value(f.dim, f.value));
        i = end;
    }

    if (!pred.empty())
    {
        m.mae = mae(pred, truth);
        m.rmse = rmse(pred, truth);
    }
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
    all_truth.insert(all_truth.end(), truth.begin(), truth.end());
    return m;
}

} // namespace detail

// Replays the trace tick by tick for every seed, imputing each injected cell
// against the window state at its tick. Metrics pool all seeds.
inline MetricsReport run_experiment(const Trace& trace, const ExperimentConfig& config,
                                    const OutcomeObserver& observer = {})
{
    config.validate();
    const Trace view = trace.restrict(config.devices, config.dims);

    MetricsReport report;
    report.config = config;
    std::vector<double> pred;
    std::vector<double> truth;
    for (std::uint64_t seed : config.seeds)
    {
        SeedMetrics m = detail::replay_seed(view, config, seed, observer, pred, truth);
        report.masked += m.masked;
        report.replacements += m.replacements;
        report.failures += m.failures;
        report.total_time += m.total_time;
        report.per_seed.push_back(m);
    }
    if (!pred.empty())
    {
        report.mae = mae(pred, truth);
        report.rmse = rmse(pred, truth);
    }
    return report;
}

// Cartesian product of models x V x N x M over a shared base config.
struct GridSpec
{
    std::vector<Model> models{Model::pbm, Model::dbm, Model::am};
    std::vector<double> rates{1.0, 5.0, 10.0};
    std::vector<std::size_t> devices{5, 7, 15};
    std::vector<std::size_t> dims{4, 9};
    ExperimentConfig base;

    // Order: N, then M, then V, then model.
    std::vector<ExperimentConfig> expand() const
    {
        std::vector<ExperimentConfig> cells;
        for (std::size_t n : devices)
            for (std::size_t m : dims)
                for (double v : rates)
                    for (Model model : models)
                    {
                        ExperimentConfig c = base;
                        c.model = model;
                        c.missing_pct = v;
                        c.devices = n;
                        c.dims = m;
                        cells.push_back(c);
                    }
        return cells;
    }

    KeyValues to_kv() const
    {
        KeyValues kv;
        std::string s;
        for (std::size_t i = 0; i < models.size(); ++i)
            s += (i ? "," : "") + std::string(to_string(models[i]));
        kv.set("models", s);
        s.clear();
        for (std::size_t i = 0; i < rates.size(); ++i)
            s += (i ? "," : "") + format_double(rates[i]);
        kv.set("V", s);
        s.clear();
        for (std::size_t i = 0; i < devices.size(); ++i)
            s += (i ? "," : "") + std::to_string(devices[i]);
        kv.set("N", s);
        s.clear();
        for (std::size_t i = 0; i < dims.size(); ++i)
            s += (i ? "," : "") + std::to_string(dims[i]);
        kv.set("M", s);
        kv.set("W", std::to_string(base.window));
        kv.set("k", std::to_string(base.blend.k));
        base.write_shared(kv);
        return kv;
    }

    static GridSpec from_kv(const KeyValues& kv)
    {
        static const std::vector<std::string> known{"models", "V", "W", "k", "N", "M", "alpha", "beta",
                                                    "epsilon_md", "ridge", "ar_order", "sigma_mode",
                                                    "wgm_weighting", "md_mode", "cs_clamp", "feed", "unit",
                                                    "seeds"};
        for (const auto& [k, v] : kv.entries())
            if (std::find(known.begin(), known.end(), k) == known.end())
                throw Error(ErrorCode::config, "unknown grid key '" + k + "'");

        GridSpec g;
        if (auto v = kv.get("models"))
        {
            g.models.clear();
            for (const auto& s : split_list(*v))
                g.models.push_back(parse_model(s));
        }
        if (auto v = kv.get("V"))
        {
            g.rates.clear();
            for (const auto& s : split_list(*v))
            {
                auto d = parse_double(s);
                if (!d)
                    throw Error(ErrorCode::config, "V: '" + s + "' is not a number");
                g.rates.push_back(*d);
            }
        }
        auto counts = [&](const char* key, std::vector<std::size_t>& dst) {
            if (auto v = kv.get(key))
            {
                dst.clear();
                for (const auto& s : split_list(*v))
                {
                    auto d = parse_int<std::size_t>(s);
                    if (!d)
                        throw Error(ErrorCode::config, std::string(key) + ": '" + s + "' is not a count");
                    dst.push_back(*d);
                }
            }
        };
        counts("N", g.devices);
        counts("M", g.dims);
        g.base.read_shared(kv);
        if (g.models.empty() || g.rates.empty() || g.devices.empty() || g.dims.empty())
            throw Error(ErrorCode::config, "grid axes must be nonempty");
        for (const auto& c : g.expand())
        {
            try
            {
                c.validate();
            }
            catch (const Error& e)
            {
                throw Error(ErrorCode::config, "grid cell " + c.label() + ": " + e.what());
            }
        }
        return g;
    }
};

// The experiment grid used throughout the evaluation: V in {1,5,10}, W=10,
// k=4, N in {5,7,15}, M in {4,9}, alpha=20, beta=2.
inline GridSpec default_grid()
{
    GridSpec g;
    g.models = {Model::pbm, Model::dbm, Model::am};
    g.rates = {1.0, 5.0, 10.0};
    g.devices = {5, 7, 15};
    g.dims = {4, 9};
    g.base.window = 10;
    g.base.blend.k = 4;
    g.base.blend.alpha = 20.0;
    g.base.blend.beta = 2.0;
    return g;
}

// Every cell sees the same trace and the same seeds, hence the same masks for
// a given (V, N, M); differences between rows come from the model alone.
inline std::vector<MetricsReport> compare_models(const Trace& trace, const std::vector<ExperimentConfig>& grid)
{
    for (const auto& c : grid)
    {
        try
        {
            c.validate();
            (void)trace.restrict(c.devices, c.dims);
        }
        catch (const Error& e)
        {
            throw Error(ErrorCode::config, "grid cell " + c.label() + ": " + e.what());
        }
    }
    std::vector<MetricsReport> rows;
    rows.reserve(grid.size());
    for (const auto& c : grid)
        rows.push_back(run_experiment(trace, c));
    return rows;
}

namespace detail
{

inline std::string metric_text(const std::optional<double>& v)
{
    return v ? format_double(*v) : std::string("NA");
}

} // namespace detail

// Deterministic columns only; timings go to write_timing_tsv.
inline void write_comparison_tsv(std::ostream& out, const std::vector<MetricsReport>& rows)
{
    out << "model\tV\tN\tM\tW\tk\talpha\tbeta\tseeds\tmasked\treplacements\tfailures\tmae\trmse\n";
    for (const auto& r : rows)
    {
        const auto& c = r.config;
        out << to_string(c.model) << '\t' << format_double(c.missing_pct) << '\t' << c.devices << '\t' << c.dims
            << '\t' << c.window << '\t' << c.blend.k << '\t' << format_double(c.blend.alpha) << '\t'
            << format_double(c.blend.beta) << '\t' << c.seeds.size() << '\t' << r.masked << '\t' << r.replacements
            << '\t' << r.failures << '\t' << detail::metric_text(r.mae) << '\t' << detail::metric_text(r.rmse)
            << '\n';
    }
}

// Per-seed rows followed by the pooled row (seed = all).
inline void write_metrics_tsv(std::ostream& out, const MetricsReport& r)
{
    out << "model\tV\tN\tM\tseed\tmasked\treplacements\tfailures\tmae\trmse\n";
    const auto& c = r.config;
    auto prefix = [&] {
        out << to_string(c.model) << '\t' << format_double(c.missing_pct) << '\t' << c.devices << '\t' << c.dims
            << '\t';
    };
    for (const auto& s : r.per_seed)
    {
        prefix();
        out << s.seed << '\t' << s.masked << '\t' << s.replacements << '\t' << s.failures << '\t'
            << detail::metric_text(s.mae) << '\t' << detail::metric_text(s.rmse) << '\n';
    }
    prefix();
    out << "all\t" << r.masked << '\t' << r.replacements << '\t' << r.failures << '\t' << detail::metric_text(r.mae)
        << '\t' << detail::metric_text(r.rmse) << '\n';
}

inline void write_timing_tsv(std::ostream& out, const std::vector<MetricsReport>& rows)
{
    out << "model\tV\tN\tM\treplacements\tmean_time_ms\n";
    for (const auto& r : rows)
    {
        const auto& c = r.config;
        out << to_string(c.model) << '\t' << format_double(c.missing_pct) << '\t' << c.devices << '\t' << c.dims
            << '\t' << r.replacements << '\t' << format_double(r.mean_time_ms()) << '\n';
    }
}

// Structured export: one `cell.<i>.<field>` block per report, timings included.
inline KeyValues metrics_kv(const std::vector<MetricsReport>& rows)
{
    KeyValues kv;
    kv.set("cells", std::to_string(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        const auto& r = rows[i];
        const std::string p = "cell." + std::to_string(i) + ".";
        kv.set(p + "model", std::string(to_string(r.config.model)));
        kv.set(p + "V", format_double(r.config.missing_pct));
        kv.set(p + "N", std::to_string(r.config.devices));
        kv.set(p + "M", std::to_string(r.config.dims));
        kv.set(p + "masked", std::to_string(r.masked));
        kv.set(p + "replacements", std::to_string(r.replacements));
        kv.set(p + "failures", std::to_string(r.failures));
        kv.set(p + "mae", detail::metric_text(r.mae));
        kv.set(p + "rmse", detail::metric_text(r.rmse));
        kv.set(p + "mean_time_ms", format_double(r.mean_time_ms()));
        for (const auto& s : r.per_seed)
        {
            const std::string q = p + "seed." + std::to_string(s.seed) + ".";
            kv.set(q + "replacements", std::to_string(s.replacements));
            kv.set(q + "failures", std::to_string(s.failures));
            kv.set(q + "mae", detail::metric_text(s.mae));
            kv.set(q + "rmse", detail::metric_text(s.rmse));
        }
    }
    return kv;
}

} // namespace edgeimpute
