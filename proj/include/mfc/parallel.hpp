#pragma once

#include <functional>

namespace mfc {

// Runs body(begin, end) over contiguous chunks of [0, count). Chunk
// boundaries depend only on count and jobs, and callers only write to
// per-index slots, so results do not depend on scheduling.
void parallel_for(int count, int jobs, const std::function<void(int, int)>& body);

int default_jobs();

}  // namespace mfc
