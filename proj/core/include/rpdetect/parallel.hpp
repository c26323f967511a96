#pragma once

#include <functional>

namespace rpdetect {

inline constexpr const char* kThreadsEnv = "REPARAM_DETECT_THREADS";

/// Worker cap: REPARAM_DETECT_THREADS when set to a positive integer,
/// otherwise the hardware concurrency (at least 1).
int worker_count();

/// Runs fn(0) .. fn(n-1) on up to worker_count() threads. Each index runs
/// exactly once; results must not depend on which thread runs it. The first
/// exception thrown by any index is rethrown after all workers finish.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace rpdetect
