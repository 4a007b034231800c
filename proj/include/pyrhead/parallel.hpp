#pragma once

#include <cstddef>
#include <functional>

namespace pyrhead {

/// Worker count from an explicit request, else $PYRHEAD_THREADS, else 1.
std::size_t resolve_threads(std::size_t requested);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Indices are split
/// into contiguous blocks; callers write results by index so the outcome is
/// independent of scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace pyrhead
