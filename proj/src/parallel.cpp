#include "bvxl/parallel.h"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace bvxl {

void parallel_ranges(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t per = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        const std::size_t begin = std::min(n, t * per);
        fn(begin, std::min(n, begin + per));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace bvxl
