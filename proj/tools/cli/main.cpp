#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "commands.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reallocates the same large buffers every batch; keeping them
  // on the heap instead of fresh mmaps avoids repeated page faults.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return quad::cli::run(argc, argv, std::cout, std::cerr);
}
