#pragma once

namespace gmem {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gmem
