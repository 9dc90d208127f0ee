#include "vpcnn/parallel.hpp"

#include <atomic>

namespace vpcnn {

namespace {
std::atomic<unsigned> g_threads{1};
}

void set_num_threads(unsigned n) { g_threads = n == 0 ? 1 : n; }

unsigned num_threads() { return g_threads; }

}  // namespace vpcnn
