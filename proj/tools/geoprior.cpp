#include "geoprior/cli.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates many short-lived MB-sized matrices; keep them on the
  // heap instead of paying an mmap/munmap pair for each.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  return geoprior::cli::run(argc, argv);
}
