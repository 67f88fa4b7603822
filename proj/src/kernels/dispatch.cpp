#include "pf/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace pf {

const Kernels* avx2_table_ptr(); // defined in kernels_avx2.cpp

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Kernels* resolve_active() {
    const char* pref = std::getenv("PERSONA_FORGE_SIMD");
    if (pref != nullptr && std::strcmp(pref, "scalar") == 0) {
        return &scalar_kernels();
    }
    const Kernels* avx2 = avx2_kernels();
    if (pref != nullptr && std::strcmp(pref, "avx2") == 0 && avx2 != nullptr) {
        return avx2;
    }
    // auto (default): best available
    return avx2 != nullptr ? avx2 : &scalar_kernels();
}

} // namespace

const Kernels* avx2_kernels() {
    static const Kernels* table = cpu_has_avx2_fma() ? avx2_table_ptr() : nullptr;
    return table;
}

const Kernels& active_kernels() {
    static const Kernels* table = resolve_active();
    return *table;
}

} // namespace pf
