/* Shared-object corpus: patching ET_DYN libraries. */
#include <stdint.h>

void lib_persist(uint64_t *p, uint64_t v) {
    *p = v;
    __asm__ volatile("clflush (%0)" ::"r"(p) : "memory");
    __asm__ volatile("sfence" ::: "memory");
}

uint64_t lib_persist_lazy(uint64_t *p, uint64_t v) {
    *p = v;
    __asm__ volatile("clflush (%0)" ::"r"(p) : "memory");
    return *p ^ v;
}
