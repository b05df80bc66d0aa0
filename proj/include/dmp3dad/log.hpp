#pragma once

#include <spdlog/spdlog.h>

namespace dmp3dad {

/// Library logger. Writes to stderr; warnings and above by default.
spdlog::logger& logger();

void set_log_level(spdlog::level::level_enum level);

}  // namespace dmp3dad
