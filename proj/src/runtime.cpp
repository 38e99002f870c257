#include "dfrf/runtime.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#include <omp.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dfrf {

void configure_runtime() {
  if (const char* env = std::getenv("DFRF_THREADS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw std::invalid_argument(std::string("DFRF_THREADS must be a positive integer, got '") + env + "'");
    omp_set_num_threads(static_cast<int>(n));
  }
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

int worker_threads() { return omp_get_max_threads(); }

}  // namespace dfrf
