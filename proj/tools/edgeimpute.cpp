// edgeimpute: command-line driver for trace synthesis, single experiments and
// model-comparison grids. See docs/FORMATS.md for every file it reads or writes.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "edgeimpute/edgeimpute.hpp"

namespace fs = std::filesystem;
using namespace edgeimpute;

namespace
{

enum ExitCode : int
{
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,
    exit_io = 3,
    exit_schema = 4,
    exit_data = 5,
    exit_config = 6,
};

int exit_code_for(ErrorCode code)
{
    switch (code)
    {
        case ErrorCode::io: return exit_io;
        case ErrorCode::schema: return exit_schema;
        case ErrorCode::parse:
        case ErrorCode::duplicate:
        case ErrorCode::sequencing: return exit_data;
        case ErrorCode::config: return exit_config;
        default: return exit_internal;
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorCode::io, "sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i)
    {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string utc_now()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out)
        throw Error(ErrorCode::io, "short write to '" + path.string() + "'");
}

fs::path prepare_out_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorCode::io, "cannot create output directory '" + dir + "': " + ec.message());
    return fs::path(dir);
}

// Flags that override whatever the config or grid file says.
struct Overrides
{
    std::optional<std::uint64_t> seed;
    std::optional<std::string> feed;
    std::optional<std::string> sigma_mode;
    std::optional<std::string> wgm_weighting;
    std::optional<std::string> md_mode;

    void apply(KeyValues& kv) const
    {
        if (seed)
            kv.set("seeds", std::to_string(*seed));
        if (feed)
            kv.set("feed", *feed);
        if (sigma_mode)
            kv.set("sigma_mode", *sigma_mode);
        if (wgm_weighting)
            kv.set("wgm_weighting", *wgm_weighting);
        if (md_mode)
            kv.set("md_mode", *md_mode);
    }
};

void add_overrides(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--seed", o.seed, "Run a single seed instead of the configured list");
    cmd->add_option("--feed", o.feed, "Value fed back after scoring: truth|imputed");
    cmd->add_option("--sigma-mode", o.sigma_mode, "Deviation fed to the blend weight: absolute|relative");
    cmd->add_option("--wgm-weighting", o.wgm_weighting, "Group-mean exponents: inverse|literal");
    cmd->add_option("--md-mode", o.md_mode, "Device distance: mean|tick_sum");
}

struct RunInputs
{
    std::string trace_path;
    std::string schema_path;
    std::string config_path;
    std::string manifest_path;
    std::string out_dir{"."};
    Overrides overrides;
};

// Resolves schema and config either from their own files or from a previous
// run's manifest, then checks the trace digest against the manifest.
struct Resolved
{
    TraceSchema schema;
    KeyValues config;
    std::string trace_bytes;
    std::string digest;
};

Resolved resolve(const RunInputs& in, const std::string& config_scope)
{
    Resolved r;
    r.trace_bytes = read_file(in.trace_path);
    r.digest = sha256_hex(r.trace_bytes);
    if (!in.manifest_path.empty())
    {
        const KeyValues manifest = KeyValues::load(in.manifest_path);
        if (manifest.get("command").value_or("") != config_scope)
            throw Error(ErrorCode::config, "manifest '" + in.manifest_path + "' was not written by '" +
                                               config_scope + "'");
        if (manifest.get("trace.sha256").value_or("") != r.digest)
            throw Error(ErrorCode::config, "trace '" + in.trace_path + "' does not match the manifest digest");
        r.schema = TraceSchema::from_kv(manifest.scoped("schema"));
        r.config = manifest.scoped(config_scope);
    }
    else
    {
        if (in.schema_path.empty() || in.config_path.empty())
            throw Error(ErrorCode::config, "schema and config paths are required without --manifest");
        r.schema = TraceSchema::load(in.schema_path);
        r.config = KeyValues::load(in.config_path);
    }
    in.overrides.apply(r.config);
    return r;
}

Trace parse_resolved(const Resolved& r, const std::string& origin)
{
    std::istringstream ss(r.trace_bytes);
    return parse_trace(ss, r.schema, origin);
}

std::string manifest_text(const std::string& command, const RunInputs& in, const Resolved& r,
                          const KeyValues& config)
{
    KeyValues m;
    m.set("manifest_version", "1");
    m.set("command", command);
    m.set("tool_version", version);
    m.set("created_at", utc_now());
    m.set("rng", std::string(Rng::algorithm));
    m.set("trace.path", in.trace_path);
    m.set("trace.sha256", r.digest);
    m.set("trace.bytes", std::to_string(r.trace_bytes.size()));
    std::string text = m.to_string();
    text += r.schema.to_kv().to_string("schema");
    text += config.to_string(command);
    return text;
}

int cmd_impute(const RunInputs& in)
{
    const Resolved r = resolve(in, "impute");
    const ExperimentConfig config = ExperimentConfig::from_kv(r.config);
    const Trace trace = parse_resolved(r, in.trace_path);
    const MetricsReport report = run_experiment(trace, config);

    const fs::path dir = prepare_out_dir(in.out_dir);
    std::ostringstream metrics;
    write_metrics_tsv(metrics, report);
    write_text(dir / "metrics.tsv", metrics.str());
    write_text(dir / "report.kv", metrics_kv({report}).to_string());
    write_text(dir / "manifest.kv", manifest_text("impute", in, r, config.to_kv()));

    std::cout << report.config.label() << ": replacements=" << report.replacements
              << " failures=" << report.failures << " mae=" << (report.mae ? format_double(*report.mae) : "NA")
              << " rmse=" << (report.rmse ? format_double(*report.rmse) : "NA")
              << " mean_time_ms=" << format_double(report.mean_time_ms()) << '\n';
    return exit_ok;
}

int cmd_grid(const RunInputs& in)
{
    const Resolved r = resolve(in, "grid");
    const GridSpec grid = GridSpec::from_kv(r.config);
    const Trace trace = parse_resolved(r, in.trace_path);
    const std::vector<MetricsReport> rows = compare_models(trace, grid.expand());

    const fs::path dir = prepare_out_dir(in.out_dir);
    std::ostringstream table;
    write_comparison_tsv(table, rows);
    write_text(dir / "comparison.tsv", table.str());
    std::ostringstream timing;
    write_timing_tsv(timing, rows);
    write_text(dir / "timing.tsv", timing.str());
    write_text(dir / "report.kv", metrics_kv(rows).to_string());
    write_text(dir / "manifest.kv", manifest_text("grid", in, r, grid.to_kv()));

    std::cout << rows.size() << " grid cells written to " << (dir / "comparison.tsv").string() << '\n';
    return exit_ok;
}

struct SynthInputs
{
    SynthParams params;
    std::string out;
    std::string schema_out;
};

int cmd_synth(const SynthInputs& in)
{
    const Trace trace = synth_trace(in.params);
    const TraceSchema schema = TraceSchema::canonical(in.params.dims);
    std::ostringstream ss;
    write_trace(ss, trace, schema);
    write_text(in.out, ss.str());
    if (!in.schema_out.empty())
        write_text(in.schema_out, schema.to_kv().to_string());
    return exit_ok;
}

struct ValidateInputs
{
    std::string trace_path;
    std::string schema_path;
    std::string config_path;
    std::string grid_path;
};

int cmd_validate(const ValidateInputs& in)
{
    const TraceSchema schema = TraceSchema::load(in.schema_path);
    const Trace trace = load_trace(in.trace_path, schema);
    std::cout << "trace: devices=" << trace.device_count() << " dims=" << trace.dims
              << " reports=" << trace.report_count() << " masked_cells=" << trace.masked_cells() << '\n';
    if (!in.config_path.empty())
    {
        const ExperimentConfig c = ExperimentConfig::from_kv(KeyValues::load(in.config_path));
        (void)trace.restrict(c.devices, c.dims);
        std::cout << "config: " << c.label() << " ok\n";
    }
    if (!in.grid_path.empty())
    {
        const GridSpec g = GridSpec::from_kv(KeyValues::load(in.grid_path));
        const auto cells = g.expand();
        for (const auto& c : cells)
        {
            try
            {
                (void)trace.restrict(c.devices, c.dims);
            }
            catch (const Error& e)
            {
                throw Error(ErrorCode::config, "grid cell " + c.label() + ": " + e.what());
            }
        }
        std::cout << "grid: " << cells.size() << " cells ok\n";
    }
    return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Streaming missing-value imputation and benchmark harness"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version);

    RunInputs impute_in;
    auto* impute = app.add_subcommand("impute", "Run one experiment config over a trace");
    impute->add_option("trace", impute_in.trace_path, "Trace file")->required();
    impute->add_option("schema", impute_in.schema_path, "Schema file");
    impute->add_option("config", impute_in.config_path, "Experiment config file");
    impute->add_option("--manifest", impute_in.manifest_path, "Re-run from a previous manifest");
    impute->add_option("--out-dir", impute_in.out_dir, "Output directory");
    add_overrides(impute, impute_in.overrides);

    RunInputs grid_in;
    auto* grid = app.add_subcommand("grid", "Compare models across a parameter grid");
    grid->add_option("trace", grid_in.trace_path, "Trace file")->required();
    grid->add_option("schema", grid_in.schema_path, "Schema file");
    grid->add_option("grid", grid_in.config_path, "Grid file");
    grid->add_option("--manifest", grid_in.manifest_path, "Re-run from a previous manifest");
    grid->add_option("--out-dir", grid_in.out_dir, "Output directory");
    add_overrides(grid, grid_in.overrides);

    SynthInputs synth_in;
    auto* synth = app.add_subcommand("synth", "Write a synthetic correlated trace");
    synth->add_option("--devices", synth_in.params.devices, "Number of devices")->capture_default_str();
    synth->add_option("--ticks", synth_in.params.ticks, "Reports per device")->capture_default_str();
    synth->add_option("--dims", synth_in.params.dims, "Dimensions per report")->capture_default_str();
    synth->add_option("--noise", synth_in.params.noise, "Per-device Gaussian noise std-dev")->capture_default_str();
    synth->add_option("--amplitude", synth_in.params.amplitude, "Latent signal amplitude")->capture_default_str();
    synth->add_option("--baseline", synth_in.params.baseline, "Latent signal baseline")->capture_default_str();
    synth->add_option("--seed", synth_in.params.seed, "RNG seed")->capture_default_str();
    synth->add_option("--out", synth_in.out, "Trace output path")->required();
    synth->add_option("--schema-out", synth_in.schema_out, "Also write the matching schema file");

    ValidateInputs validate_in;
    auto* validate = app.add_subcommand("validate", "Check a trace, schema and optional config/grid");
    validate->add_option("trace", validate_in.trace_path, "Trace file")->required();
    validate->add_option("schema", validate_in.schema_path, "Schema file")->required();
    validate->add_option("--config", validate_in.config_path, "Experiment config file");
    validate->add_option("--grid", validate_in.grid_path, "Grid file");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    try
    {
        if (*impute)
            return cmd_impute(impute_in);
        if (*grid)
            return cmd_grid(grid_in);
        if (*synth)
            return cmd_synth(synth_in);
        if (*validate)
            return cmd_validate(validate_in);
    }
    catch (const Error& e)
    {
        std::cerr << "edgeimpute: " << to_string(e.code()) << " error: " << e.what() << '\n';
        return exit_code_for(e.code());
    }
    catch (const std::exception& e)
    {
        std::cerr << "edgeimpute: internal error: " << e.what() << '\n';
        return exit_internal;
    }
    return exit_usage;
}
