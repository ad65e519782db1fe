// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string_view>

namespace cardioclip {

/// Writes "warning: <msg>" to stderr (or the installed sink) and counts it.
void warn(std::string_view msg);
std::size_t warning_count();

/// Replaces the stderr sink; an empty function restores it.
void set_warning_sink(std::function<void(std::string_view)> sink);

}  // namespace cardioclip
