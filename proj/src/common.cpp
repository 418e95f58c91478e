#include "shunted/common.hpp"

#include <malloc.h>

namespace shunted {

void tune_allocator_for_training() {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace shunted
