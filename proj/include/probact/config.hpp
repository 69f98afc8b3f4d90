#pragma once

namespace probact {

#ifdef PROBACT_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

inline constexpr bool kRealIsDouble = sizeof(real) == 8;

}  // namespace probact
