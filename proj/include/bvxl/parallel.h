#pragma once

#include <cstddef>
#include <functional>

namespace bvxl {

/// Splits [0, n) into at most `threads` contiguous ranges and runs fn(begin, end) on
/// each, one std::thread per range. The first exception thrown by any range is
/// rethrown after all threads join. threads <= 1 runs inline.
void parallel_ranges(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace bvxl
