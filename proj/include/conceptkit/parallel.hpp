#pragma once

#include <cstddef>
#include <functional>

namespace conceptkit {

// Runs task(i) for i in [0, count) on up to `threads` workers. Work is
// handed out by index, so results written per index do not depend on the
// thread count. The first exception thrown by a task is rethrown.
void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& task);

unsigned default_threads();

}  // namespace conceptkit
