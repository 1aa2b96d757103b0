#pragma once

#include <string_view>

namespace edap {

inline constexpr std::string_view kToolName = "eda-personalize";
inline constexpr std::string_view kToolVersion = "0.1.0";

}  // namespace edap
