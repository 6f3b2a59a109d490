#pragma once

namespace coxcp {

inline constexpr const char* version = "0.1.0";

}  // namespace coxcp
