#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace edgeimpute
{

enum class ErrorCode
{
    sequencing,
    schema,
    not_found,
    bounds,
    undefined_similarity,
    insufficient_overlap,
    singular_covariance,
    insufficient_history,
    no_local_data,
    domain,
    degenerate_weights,
    imputation_impossible,
    precondition,
    parse,
    duplicate,
    config,
    undefined_metric,
    io,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code)
    {
        case ErrorCode::sequencing: return "sequencing";
        case ErrorCode::schema: return "schema";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::bounds: return "bounds";
        case ErrorCode::undefined_similarity: return "undefined_similarity";
        case ErrorCode::insufficient_overlap: return "insufficient_overlap";
        case ErrorCode::singular_covariance: return "singular_covariance";
        case ErrorCode::insufficient_history: return "insufficient_history";
        case ErrorCode::no_local_data: return "no_local_data";
        case ErrorCode::domain: return "domain";
        case ErrorCode::degenerate_weights: return "degenerate_weights";
        case ErrorCode::imputation_impossible: return "imputation_impossible";
        case ErrorCode::precondition: return "precondition";
        case ErrorCode::parse: return "parse";
        case ErrorCode::duplicate: return "duplicate";
        case ErrorCode::config: return "config";
        case ErrorCode::undefined_metric: return "undefined_metric";
        case ErrorCode::io: return "io";
    }
    return "unknown";
}

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can branch without parsing messages.
class Error : public std::runtime_error
{
  public:
    Error(ErrorCode code, const std::string& message) :
        std::runtime_error(message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

} // namespace edgeimpute
