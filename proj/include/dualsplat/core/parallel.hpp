#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace dualsplat {

/// Process-wide worker cap. 0 = hardware concurrency. Set once by the CLI
/// from --threads / DUALSPLAT_THREADS.
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n). Work items are pulled from a shared counter,
/// so any accumulation must go into per-item slots; callers merge those in
/// index order afterwards to stay bitwise reproducible across thread counts.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace dualsplat
