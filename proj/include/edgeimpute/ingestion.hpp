#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edgeimpute/error.hpp"
#include "edgeimpute/keyvalue.hpp"
#include "edgeimpute/rng.hpp"
#include "edgeimpute/stream_core.hpp"

namespace edgeimpute
{

// Column mapping for delimiter-separated traces. With a header row, columns
// are referenced by name (a bare integer falls back to a 0-based index);
// without one, by 0-based index only.
struct TraceSchema
{
    std::string device_column{"0"};
    std::string timestamp_column{"1"};
    std::vector<std::string> value_columns;
    char delimiter{','};
    bool header{false};
    std::vector<std::string> na_tokens{"NA"};

    std::size_t dims() const noexcept { return value_columns.size(); }

    void validate() const
    {
        if (value_columns.empty())
            throw Error(ErrorCode::schema, "schema declares no value columns");
        std::vector<std::string> all{device_column, timestamp_column};
        all.insert(all.end(), value_columns.begin(), value_columns.end());
        std::sort(all.begin(), all.end());
        if (std::adjacent_find(all.begin(), all.end()) != all.end())
            throw Error(ErrorCode::schema, "schema maps the same column twice");
        if (!header)
            for (const auto& c : all)
                if (!parse_int<std::size_t>(c))
                    throw Error(ErrorCode::schema, "column '" + c + "' must be an index when header = false");
    }

    KeyValues to_kv() const
    {
        KeyValues kv;
        kv.set("delimiter", delimiter_name(delimiter));
        kv.set("header", header ? "true" : "false");
        kv.set("device_column", device_column);
        kv.set("timestamp_column", timestamp_column);
        std::string cols;
        for (std::size_t i = 0; i < value_columns.size(); ++i)
            cols += (i ? "," : "") + value_columns[i];
        kv.set("value_columns", cols);
        std::string na;
        for (std::size_t i = 0; i < na_tokens.size(); ++i)
            na += (i ? "," : "") + na_tokens[i];
        kv.set("na_tokens", na);
        return kv;
    }

    static TraceSchema from_kv(const KeyValues& kv)
    {
        TraceSchema s;
        s.device_column = kv.require("device_column");
        s.timestamp_column = kv.require("timestamp_column");
        s.value_columns = split_list(kv.require("value_columns"));
        s.delimiter = parse_delimiter(kv.get("delimiter").value_or("comma"));
        if (auto h = kv.get("header"))
        {
            if (*h == "true" || *h == "1" || *h == "yes")
                s.header = true;
            else if (*h == "false" || *h == "0" || *h == "no")
                s.header = false;
            else
                throw Error(ErrorCode::schema, "header must be true or false, got '" + *h + "'");
        }
        if (auto na = kv.get("na_tokens"))
            s.na_tokens = split_list(*na);
        for (const auto& [k, v] : kv.entries())
            if (k != "device_column" && k != "timestamp_column" && k != "value_columns" && k != "delimiter" &&
                k != "header" && k != "na_tokens")
                throw Error(ErrorCode::schema, "unknown schema key '" + k + "'");
        s.validate();
        return s;
    }

    static TraceSchema load(const std::string& path)
    {
        KeyValues kv;
        try
        {
            kv = KeyValues::load(path);
        }
        catch (const Error& e)
        {
            if (e.code() == ErrorCode::config)
                throw Error(ErrorCode::schema, e.what());
            throw;
        }
        return from_kv(kv);
    }

    // Headerless layout written by the synthesizer: device, tick, d0..d{M-1}.
    static TraceSchema canonical(std::size_t dims)
    {
        TraceSchema s;
        s.device_column = "0";
        s.timestamp_column = "1";
        for (std::size_t d = 0; d < dims; ++d)
            s.value_columns.push_back(std::to_string(d + 2));
        return s;
    }

    static char parse_delimiter(std::string_view v)
    {
        if (v == "comma" || v == ",")
            return ',';
        if (v == "tab" || v == "\\t")
            return '\t';
        if (v == "space")
            return ' ';
        if (v == "semicolon" || v == ";")
            return ';';
        if (v == "pipe" || v == "|")
            return '|';
        if (v.size() == 1)
            return v.front();
        throw Error(ErrorCode::schema, "unsupported delimiter '" + std::string(v) + "'");
    }

    static std::string delimiter_name(char c)
    {
        switch (c)
        {
            case ',': return "comma";
            case '\t': return "tab";
            case ' ': return "space";
            case ';': return "semicolon";
            case '|': return "pipe";
            default: return std::string(1, c);
        }
    }
};

// A loaded trace: reports grouped by dense device index, each group ordered
// by timestamp.
struct Trace
{
    std::vector<std::string> device_labels;
    std::size_t dims{0};
    std::vector<std::vector<DeviceReport>> devices;

    std::size_t device_count() const noexcept { return devices.size(); }

    std::size_t report_count() const noexcept
    {
        std::size_t n = 0;
        for (const auto& d : devices)
            n += d.size();
        return n;
    }

    std::size_t masked_cells() const noexcept
    {
        std::size_t n = 0;
        for (const auto& d : devices)
            for (const auto& r : d)
                n += r.missing_count();
        return n;
    }

    // First `n` devices and first `m` dimensions.
    Trace restrict(std::size_t n, std::size_t m) const
    {
        if (n > devices.size() || m > dims || n == 0 || m == 0)
            throw Error(ErrorCode::config, "trace has " + std::to_string(devices.size()) + " devices and " +
                                               std::to_string(dims) + " dimensions; requested N=" +
                                               std::to_string(n) + ", M=" + std::to_string(m));
        Trace out;
        out.dims = m;
        out.device_labels.assign(device_labels.begin(), device_labels.begin() + static_cast<std::ptrdiff_t>(n));
        out.devices.resize(n);
        for (std::size_t j = 0; j < n; ++j)
        {
            out.devices[j].reserve(devices[j].size());
            for (const auto& r : devices[j])
            {
                std::vector<double> values(m);
                std::vector<bool> missing(m);
                for (std::size_t d = 0; d < m; ++d)
                {
                    missing[d] = r.is_missing(d);
                    values[d] = missing[d] ? 0.0 : r.raw(d);
                }
                out.devices[j].emplace_back(r.device(), r.timestamp(), std::move(values), std::move(missing));
            }
        }
        return out;
    }

    bool operator==(const Trace& other) const
    {
        if (device_labels != other.device_labels || dims != other.dims || devices.size() != other.devices.size())
            return false;
        for (std::size_t j = 0; j < devices.size(); ++j)
        {
            if (devices[j].size() != other.devices[j].size())
                return false;
            for (std::size_t i = 0; i < devices[j].size(); ++i)
            {
                const auto& a = devices[j][i];
                const auto& b = other.devices[j][i];
                if (a.device() != b.device() || a.timestamp() != b.timestamp() ||
                    a.missing_mask() != b.missing_mask())
                    return false;
                for (std::size_t d = 0; d < dims; ++d)
                    if (!a.is_missing(d) && a.raw(d) != b.raw(d))
                        return false;
            }
        }
        return true;
    }
};

namespace detail
{

inline std::vector<std::string_view> split_row(std::string_view line, char delim)
{
    std::vector<std::string_view> cells;
    if (delim == ' ')
    {
        std::size_t pos = 0;
        while (pos < line.size())
        {
            const auto start = line.find_first_not_of(' ', pos);
            if (start == std::string_view::npos)
                break;
            const auto end = line.find(' ', start);
            cells.push_back(line.substr(start, end == std::string_view::npos ? line.npos : end - start));
            pos = end == std::string_view::npos ? line.size() : end;
        }
        return cells;
    }
    std::size_t pos = 0;
    while (true)
    {
        const auto next = line.find(delim, pos);
        cells.push_back(KeyValues::trim(line.substr(pos, next == std::string_view::npos ? line.npos : next - pos)));
        if (next == std::string_view::npos)
            break;
        pos = next + 1;
    }
    return cells;
}

inline std::size_t resolve_column(const std::string& ref, const std::vector<std::string>& header, bool has_header)
{
    if (has_header)
    {
        auto it = std::find(header.begin(), header.end(), ref);
        if (it != header.end())
            return static_cast<std::size_t>(it - header.begin());
    }
    if (auto idx = parse_int<std::size_t>(ref))
        return *idx;
    throw Error(ErrorCode::schema, "column '" + ref + "' not found in header");
}

} // namespace detail

inline Trace parse_trace(std::istream& in, const TraceSchema& schema, const std::string& origin = "<stream>")
{
    schema.validate();
    const std::size_t m = schema.dims();
    std::vector<std::string> header;
    std::size_t line_no = 0;
    std::string line;

    auto where = [&](std::size_t n) { return origin + ":" + std::to_string(n) + ": "; };

    if (schema.header)
    {
        while (std::getline(in, line))
        {
            ++line_no;
            if (!KeyValues::trim(line).empty())
                break;
        }
        for (auto cell : detail::split_row(line, schema.delimiter))
            header.emplace_back(cell);
    }

    const std::size_t dev_col = detail::resolve_column(schema.device_column, header, schema.header);
    const std::size_t ts_col = detail::resolve_column(schema.timestamp_column, header, schema.header);
    std::vector<std::size_t> val_cols;
    for (const auto& c : schema.value_columns)
        val_cols.push_back(detail::resolve_column(c, header, schema.header));
    {
        auto cols = val_cols;
        cols.push_back(dev_col);
        cols.push_back(ts_col);
        std::sort(cols.begin(), cols.end());
        if (std::adjacent_find(cols.begin(), cols.end()) != cols.end())
            throw Error(ErrorCode::schema, "schema maps the same column twice");
    }
    std::size_t needed = std::max(dev_col, ts_col);
    for (auto c : val_cols)
        needed = std::max(needed, c);

    Trace trace;
    trace.dims = m;
    std::map<std::string, DeviceId, std::less<>> ids;
    struct Row
    {
        Tick ts;
        std::vector<double> values;
        std::vector<bool> missing;
        std::size_t line;
    };
    std::vector<std::vector<Row>> rows;

    while (std::getline(in, line))
    {
        ++line_no;
        if (KeyValues::trim(line).empty())
            continue;
        const auto cells = detail::split_row(line, schema.delimiter);
        if (cells.size() <= needed)
            throw Error(ErrorCode::parse, where(line_no) + "expected at least " + std::to_string(needed + 1) +
                                              " columns, found " + std::to_string(cells.size()));
        const std::string_view label = cells[dev_col];
        if (label.empty())
            throw Error(ErrorCode::parse, where(line_no) + "empty device id");
        auto ts = parse_int<Tick>(cells[ts_col]);
        if (!ts)
            throw Error(ErrorCode::parse, where(line_no) + "timestamp '" + std::string(cells[ts_col]) +
                                              "' is not an integer tick");
        Row row{*ts, std::vector<double>(m, 0.0), std::vector<bool>(m, false), line_no};
        for (std::size_t d = 0; d < m; ++d)
        {
            const std::string_view cell = cells[val_cols[d]];
            if (std::find(schema.na_tokens.begin(), schema.na_tokens.end(), cell) != schema.na_tokens.end())
            {
                row.missing[d] = true;
                continue;
            }
            auto v = parse_double(cell);
            if (!v || !std::isfinite(*v))
                throw Error(ErrorCode::parse, where(line_no) + "value '" + std::string(cell) + "' in column " +
                                                  schema.value_columns[d] + " is not numeric");
            row.values[d] = *v;
        }
        auto it = ids.find(label);
        if (it == ids.end())
        {
            it = ids.emplace(std::string(label), static_cast<DeviceId>(trace.device_labels.size())).first;
            trace.device_labels.emplace_back(label);
            rows.emplace_back();
        }
        rows[it->second].push_back(std::move(row));
    }

    trace.devices.resize(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j)
    {
        auto& group = rows[j];
        std::stable_sort(group.begin(), group.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
        for (std::size_t i = 1; i < group.size(); ++i)
            if (group[i].ts == group[i - 1].ts)
                throw Error(ErrorCode::duplicate, where(group[i].line) + "duplicate report for device '" +
                                                      trace.device_labels[j] + "' at tick " +
                                                      std::to_string(group[i].ts));
        trace.devices[j].reserve(group.size());
        for (auto& r : group)
            trace.devices[j].emplace_back(static_cast<DeviceId>(j), r.ts, std::move(r.values), std::move(r.missing));
    }
    return trace;
}

inline Trace load_trace(const std::string& path, const TraceSchema& schema)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::io, "cannot open trace '" + path + "'");
    return parse_trace(in, schema, path);
}

// Interleaved stream order: by tick, then by device index.
inline void write_trace(std::ostream& out, const Trace& trace, const TraceSchema& schema)
{
    schema.validate();
    if (schema.dims() != trace.dims)
        throw Error(ErrorCode::schema, "schema and trace disagree on the number of dimensions");
    const std::string na = schema.na_tokens.empty() ? std::string("NA") : schema.na_tokens.front();
    const char delim = schema.delimiter;

    // Slot layout: named schemas write device, tick, values in order; indexed
    // schemas put each field at its declared index.
    std::vector<std::size_t> slots;
    std::size_t width = 2 + trace.dims;
    if (schema.header)
    {
        for (std::size_t i = 0; i < width; ++i)
            slots.push_back(i);
        out << schema.device_column << delim << schema.timestamp_column;
        for (const auto& c : schema.value_columns)
            out << delim << c;
        out << '\n';
    }
    else
    {
        slots.push_back(*parse_int<std::size_t>(schema.device_column));
        slots.push_back(*parse_int<std::size_t>(schema.timestamp_column));
        for (const auto& c : schema.value_columns)
            slots.push_back(*parse_int<std::size_t>(c));
        width = *std::max_element(slots.begin(), slots.end()) + 1;
    }

    std::vector<std::pair<Tick, const DeviceReport*>> order;
    for (const auto& dev : trace.devices)
        for (const auto& r : dev)
            order.emplace_back(r.timestamp(), &r);
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first < b.first;
        return a.second->device() < b.second->device();
    });

    std::vector<std::string> cells(width);
    for (const auto& [ts, r] : order)
    {
        std::fill(cells.begin(), cells.end(), std::string());
        cells[slots[0]] = trace.device_labels.at(r->device());
        cells[slots[1]] = std::to_string(ts);
        for (std::size_t d = 0; d < trace.dims; ++d)
            cells[slots[2 + d]] = r->is_missing(d) ? na : format_double(r->raw(d));
        for (std::size_t i = 0; i < width; ++i)
        {
            if (i)
                out << delim;
            out << cells[i];
        }
        out << '\n';
    }
}

enum class InjectionUnit
{
    cell,
    vector,
};

constexpr std::string_view to_string(InjectionUnit u) noexcept
{
    return u == InjectionUnit::cell ? "cell" : "vector";
}

struct InjectionOptions
{
    double rate{5.0}; // percent
    std::uint64_t seed{1};
    InjectionUnit unit{InjectionUnit::cell};
    // Reports at the start of each device's stream that are never masked.
    std::size_t warmup{0};
};

struct MaskedCell
{
    DeviceId device{0};
    Tick tick{0};
    std::size_t dimension{0};
    double truth{0.0};

    friend bool operator==(const MaskedCell&, const MaskedCell&) = default;
};

struct InjectionPlan
{
    double rate{0.0};
    std::uint64_t seed{0};
    InjectionUnit unit{InjectionUnit::cell};
    std::size_t eligible{0};
    std::string rng{Rng::algorithm};
    // Sorted by (device, tick, dimension).
    std::vector<MaskedCell> cells;
};

// Masks round(rate/100 * eligible) units drawn uniformly without replacement.
// Eligible units are unmasked cells (or vectors with at least one unmasked
// cell) past each device's warm-up prefix.
inline std::pair<Trace, InjectionPlan> inject_missing(const Trace& trace, const InjectionOptions& options)
{
    if (!(options.rate > 0.0 && options.rate < 100.0))
        throw Error(ErrorCode::config, "missing-value rate must lie in (0, 100), got " + format_double(options.rate));

    struct Unit
    {
        std::size_t device;
        std::size_t report;
        std::size_t dim; // ignored for whole-vector units
    };
    std::vector<Unit> eligible;
    for (std::size_t j = 0; j < trace.devices.size(); ++j)
    {
        const auto& dev = trace.devices[j];
        for (std::size_t i = options.warmup; i < dev.size(); ++i)
        {
            if (options.unit == InjectionUnit::vector)
            {
                if (dev[i].missing_count() < dev[i].dims())
                    eligible.push_back({j, i, 0});
                continue;
            }
            for (std::size_t d = 0; d < trace.dims; ++d)
                if (!dev[i].is_missing(d))
                    eligible.push_back({j, i, d});
        }
    }

    const auto count = static_cast<std::size_t>(std::llround(options.rate / 100.0 * static_cast<double>(eligible.size())));

    // Partial Fisher-Yates over the eligible list.
    Rng rng(options.seed);
    std::vector<std::size_t> idx(eligible.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    for (std::size_t i = 0; i < count; ++i)
    {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());

    Trace out = trace;
    InjectionPlan plan;
    plan.rate = options.rate;
    plan.seed = options.seed;
    plan.unit = options.unit;
    plan.eligible = eligible.size();
    for (std::size_t u : idx)
    {
        const Unit& unit = eligible[u];
        DeviceReport& report = out.devices[unit.device][unit.report];
        const DeviceReport& original = trace.devices[unit.device][unit.report];
        auto mask_one = [&](std::size_t d) {
            plan.cells.push_back({static_cast<DeviceId>(unit.device), original.timestamp(), d, original.raw(d)});
            report = report.with_missing(d);
        };
        if (options.unit == InjectionUnit::vector)
        {
            for (std::size_t d = 0; d < trace.dims; ++d)
                if (!original.is_missing(d))
                    mask_one(d);
        }
        else
        {
            mask_one(unit.dim);
        }
    }
    return {std::move(out), std::move(plan)};
}

inline void write_plan(std::ostream& out, const InjectionPlan& plan, const Trace& trace)
{
    out << "# rate=" << format_double(plan.rate) << " seed=" << plan.seed << " unit=" << to_string(plan.unit)
        << " eligible=" << plan.eligible << " rng=" << plan.rng << '\n';
    out << "device\ttick\tdimension\ttruth\n";
    for (const auto& c : plan.cells)
        out << trace.device_labels.at(c.device) << '\t' << c.tick << '\t' << c.dimension << '\t'
            << format_double(c.truth) << '\n';
}

struct SynthParams
{
    std::size_t devices{5};
    std::size_t ticks{1000};
    std::size_t dims{4};
    double noise{0.05};
    std::uint64_t seed{1};
    double amplitude{1.0};
    double baseline{10.0};
};

// Devices share one smooth latent signal per dimension (three low-frequency
// sinusoids, periods 120-480 ticks) and add i.i.d. Gaussian noise. Ticks run
// 1..ticks; dimension d sits at baseline * (1 + d/4).
inline Trace synth_trace(const SynthParams& p)
{
    if (p.devices == 0 || p.ticks == 0 || p.dims == 0)
        throw Error(ErrorCode::config, "synthetic trace needs at least one device, tick and dimension");
    if (!(p.noise >= 0.0) || !std::isfinite(p.noise))
        throw Error(ErrorCode::config, "noise must be a nonnegative number");

    Rng rng(p.seed);
    constexpr std::size_t harmonics = 3;
    constexpr double weight[harmonics] = {4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0};
    std::vector<double> period(p.dims * harmonics);
    std::vector<double> phase(p.dims * harmonics);
    for (std::size_t i = 0; i < period.size(); ++i)
    {
        period[i] = rng.uniform(120.0, 480.0);
        phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    Trace trace;
    trace.dims = p.dims;
    trace.devices.resize(p.devices);
    for (std::size_t j = 0; j < p.devices; ++j)
    {
        trace.device_labels.push_back("dev" + std::to_string(j));
        trace.devices[j].reserve(p.ticks);
    }
    for (std::size_t t = 1; t <= p.ticks; ++t)
    {
        std::vector<double> latent(p.dims);
        for (std::size_t d = 0; d < p.dims; ++d)
        {
            double s = 0.0;
            for (std::size_t h = 0; h < harmonics; ++h)
                s += weight[h] *
                     std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period[d * harmonics + h] +
                              phase[d * harmonics + h]);
            latent[d] = p.baseline * (1.0 + 0.25 * static_cast<double>(d)) + p.amplitude * s;
        }
        for (std::size_t j = 0; j < p.devices; ++j)
        {
            std::vector<double> values = latent;
            if (p.noise > 0.0)
                for (double& v : values)
                    v += p.noise * rng.normal();
            trace.devices[j].emplace_back(static_cast<DeviceId>(j), static_cast<Tick>(t), std::move(values));
        }
    }
    return trace;
}

} // namespace edgeimpute
