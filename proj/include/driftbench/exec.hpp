#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace driftbench {

// Execution policy for batch-level kernels. Parallel splits loop iterations
// across OpenMP threads; every iteration writes only its own slot, so results
// are bitwise identical to Serial regardless of thread count.
enum class Exec { Serial, Parallel };

template <typename F>
inline void parallel_for(Exec exec, int n, F&& body) {
#ifdef _OPENMP
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    (void)exec;
    for (int i = 0; i < n; ++i) body(i);
}

inline int exec_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace driftbench
