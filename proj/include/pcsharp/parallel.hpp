#pragma once

#include <cstddef>
#include <functional>

namespace pcsharp {

/// Worker count used by batch-parallel loops. Defaults to 1, which keeps
/// every reduction in a fixed order and results bit-reproducible.
void set_num_threads(int threads);
int num_threads();

/// Splits [0, n) into contiguous chunks, one per worker, and calls
/// body(worker, begin, end). Chunk boundaries depend only on n and the
/// worker count.
void parallel_chunks(std::size_t n,
                     const std::function<void(int worker, std::size_t begin, std::size_t end)>& body);

}  // namespace pcsharp
