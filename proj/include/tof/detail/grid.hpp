#pragma once

#include <cstddef>

namespace tof::detail {

/// Mirror an out-of-range index back into [0, n) without repeating the edge
/// sample (…, 2, 1 | 0, 1, 2, … | n-2, n-3, …).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) noexcept {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace tof::detail
