#include "survkan/kernels.hpp"

#include <cstdlib>
#include <string>

namespace survkan::kernels {
namespace {

struct Choice {
    const KernelTable* table;
    std::string name;
};

Choice pick() {
    const char* force = std::getenv("SURVKAN_KERNELS");
    const std::string want = force ? force : "";
#if defined(__x86_64__)
    if (want == "avx2") return {&avx2_table(), "avx2"};
    if (want == "scalar") return {&scalar_table(), "scalar"};
    if (__builtin_cpu_supports("avx2")) return {&avx2_table(), "avx2"};
#else
    if (want == "scalar") return {&scalar_table(), "scalar"};
#endif
    return {&scalar_table(), "scalar"};
}

const Choice& choice() {
    static const Choice c = pick();
    return c;
}

}  // namespace

const KernelTable& active() { return *choice().table; }
const std::string& active_name() { return choice().name; }

}  // namespace survkan::kernels
