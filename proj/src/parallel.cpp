#include "fepn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

namespace fepn {

std::size_t worker_count() {
  std::size_t n = 0;
  if (const char* env = std::getenv("FEPN_THREADS")) {
    const std::string_view text(env);
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc() || end != text.data() + text.size()) n = 0;  // malformed: auto
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void parallel_chunks(std::size_t n_chunks, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n_chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < n_chunks; c = next++) {
          try {
            fn(c);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace fepn
