#pragma once

namespace xtkd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace xtkd
