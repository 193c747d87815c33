#include "mrdust/common.hpp"

#include <omp.h>

#include <algorithm>

namespace mrdust {

void set_threads(int n) { omp_set_num_threads(std::max(n, 1)); }

int threads() { return omp_get_max_threads(); }

}  // namespace mrdust
