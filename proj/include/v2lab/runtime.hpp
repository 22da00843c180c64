#pragma once

#include <functional>

namespace v2lab {

/// Worker count for read-only data-parallel loops, controlled by the
/// V2LAB_THREADS environment variable. Unset, "0", or "1" mean serial
/// execution. Training itself always runs serially for determinism.
int thread_count();

/// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. With thread_count() == 1 this is a plain serial call. The split is
/// a pure partition, so results must not depend on chunk boundaries.
void parallel_chunks(int n, const std::function<void(int, int)>& fn);

}  // namespace v2lab
