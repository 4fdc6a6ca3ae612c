#include "crowd/parallel.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crowd::parallel {

namespace {
std::atomic<bool> g_deterministic{false};
}

bool available() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

void set_deterministic(bool on) { g_deterministic.store(on); }
bool deterministic() { return g_deterministic.load(); }
bool enabled() { return available() && !deterministic(); }

int max_threads() {
#ifdef _OPENMP
    return enabled() ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

SerialScope::SerialScope() : previous_(deterministic()) { set_deterministic(true); }
SerialScope::~SerialScope() { set_deterministic(previous_); }

}  // namespace crowd::parallel
