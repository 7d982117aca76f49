#pragma once

namespace bifdr {

inline constexpr const char* kVersion = "0.1.0";
/// Version of the JSON estimate and CSV report layouts.
inline constexpr int kSchemaVersion = 1;

}  // namespace bifdr
