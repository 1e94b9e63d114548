#pragma once

#include "edgeimpute/correlation.hpp"
#include "edgeimpute/error.hpp"
#include "edgeimpute/evaluation.hpp"
#include "edgeimpute/imputation.hpp"
#include "edgeimpute/ingestion.hpp"
#include "edgeimpute/keyvalue.hpp"
#include "edgeimpute/rng.hpp"
#include "edgeimpute/stream_core.hpp"

namespace edgeimpute
{

inline constexpr const char* version = "0.1.0";

} // namespace edgeimpute
