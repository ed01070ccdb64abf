#pragma once

namespace advgrid {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace advgrid
