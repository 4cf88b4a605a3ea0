#include "rsb/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace rsb::kernels {

const Ops& scalar_ops();  // kernels_scalar.cpp
const Ops* avx2_ops();    // kernels_avx2.cpp, nullptr off x86-64

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
    return avx2_ops() != nullptr && __builtin_cpu_supports("avx2") &&
           __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa detect() {
    return avx2_available() ? Isa::avx2 : Isa::scalar;
}

const Ops& table(Isa isa) {
    if (isa == Isa::avx2) {
        if (!avx2_available()) {
            throw std::runtime_error("avx2 kernels not available on this CPU");
        }
        return *avx2_ops();
    }
    return scalar_ops();
}

namespace {

const Ops* initial_table() {
    if (const char* env = std::getenv("RSB_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) {
            return &scalar_ops();
        }
        if (std::strcmp(env, "avx2") == 0) {
            return &table(Isa::avx2);
        }
        throw std::runtime_error("RSB_KERNELS must be 'scalar' or 'avx2'");
    }
    return &table(detect());
}

std::atomic<const Ops*>& active_slot() {
    static std::atomic<const Ops*> slot{initial_table()};
    return slot;
}

} // namespace

const Ops& active() {
    return *active_slot().load(std::memory_order_relaxed);
}

void force(Isa isa) {
    active_slot().store(&table(isa), std::memory_order_relaxed);
}

} // namespace rsb::kernels
