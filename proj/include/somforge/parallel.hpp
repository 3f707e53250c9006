#pragma once

#include <cstddef>
#include <functional>

namespace somforge::parallel {

/// Worker count used by kernels. Defaults to SOMFORGE_THREADS or 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// In deterministic mode every kernel runs on the calling thread.
bool deterministic();
void set_deterministic(bool on);

/// Runs fn(0) .. fn(n_chunks - 1), possibly concurrently. Callers partition
/// work into chunks whose boundaries do not depend on the thread count and
/// reduce per-chunk partials in chunk order, so results are bit-identical for
/// any worker count.
void for_each_chunk(std::size_t n_chunks, const std::function<void(std::size_t)>& fn);

}  // namespace somforge::parallel
