#pragma once

#include <cstddef>
#include <functional>

namespace fepn {

/// Worker count from FEPN_THREADS (0, unset or malformed = hardware concurrency).
std::size_t worker_count();

/// Run fn(chunk) for chunk in [0, n_chunks). Chunks are independent; callers
/// reduce per-chunk results in chunk order so the outcome does not depend on
/// the number of workers.
void parallel_chunks(std::size_t n_chunks, const std::function<void(std::size_t)>& fn);

}  // namespace fepn
