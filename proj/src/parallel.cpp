#include "partscope/parallel.hpp"

#include <cstdlib>
#include <string>

namespace partscope::par {

namespace {

int env_cap() {
  const char* v = std::getenv("PARTSCOPE_THREADS");
  if (v == nullptr) return 0;
  try {
    const int n = std::stoi(v);
    return n > 0 ? n : 0;
  } catch (...) {
    return 0;
  }
}

int& override_cap() {
  static int cap = -1;  // -1 = unset
  return cap;
}

}  // namespace

int threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  const int ov = override_cap();
  const int cap = ov >= 0 ? ov : env_cap();
  if (cap > 0 && cap < n) n = cap;
  return n > 0 ? n : 1;
}

void set_thread_cap(int n) { override_cap() = n > 0 ? n : -1; }

}  // namespace partscope::par
