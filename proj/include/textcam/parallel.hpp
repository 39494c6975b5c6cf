#pragma once

#include <cstddef>
#include <functional>

namespace textcam {

// Worker count: TEXTCAM_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
unsigned worker_count();

// Calls body(i) for i in [0, n) across worker_count() threads. Each index is
// visited exactly once; the body must not depend on visiting order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace textcam
