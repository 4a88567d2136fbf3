#pragma once

namespace folio {

inline constexpr const char* version_string = "0.1.0";

}  // namespace folio
