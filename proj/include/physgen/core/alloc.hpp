#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace physgen {

// Keeps large repeated allocations on the heap free list instead of cycling
// them through mmap/munmap; called once by the heavy numeric entry points.
inline void tune_allocator() {
#if defined(__GLIBC__)
    static bool done = false;
    if (!done) {
        mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
        done = true;
    }
#endif
}

} // namespace physgen
