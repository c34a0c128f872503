#pragma once

namespace pwan {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pwan
