#pragma once

#include <cstddef>
#include <functional>

namespace cvd {

// Worker cap. Defaults to the hardware concurrency, clamped by the
// CVD_THREADS environment variable when set.
int max_threads();

// Runs fn(begin, end) over a static partition of [0, n). Chunks are disjoint,
// so as long as fn writes only inside its range the result is bit-identical
// for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace cvd
