#include <malloc.h>

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  // keep large tensor buffers mapped between RoIs
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return pyrhead::cli::run(argc, argv, std::cout, std::cerr);
}
