/* Flush-free control-flow-heavy program; decoder-agreement corpus only. */
#include <stdint.h>
#include <stdio.h>
#include <string.h>

static int cmp_u32(const void *a, const void *b) {
    uint32_t x = *(const uint32_t *)a, y = *(const uint32_t *)b;
    return (x > y) - (x < y);
}

static uint32_t rng_state = 0x12345678u;

static uint32_t xorshift(void) {
    rng_state ^= rng_state << 13;
    rng_state ^= rng_state >> 17;
    rng_state ^= rng_state << 5;
    return rng_state;
}

int main(int argc, char **argv) {
    uint32_t values[256];
    char tag[32];
    for (int i = 0; i < 256; i++)
        values[i] = xorshift();
    qsort(values, 256, sizeof values[0], cmp_u32);
    uint64_t acc = 0;
    for (int i = 0; i < 256; i++) {
        switch (values[i] % 7) {
        case 0: acc += values[i]; break;
        case 1: acc ^= values[i]; break;
        case 2: acc *= 3; break;
        case 3: acc -= values[i] >> 3; break;
        case 4: acc = (acc << 7) | (acc >> 57); break;
        case 5: acc += (uint64_t)values[i] * i; break;
        default: acc ^= (uint64_t)i << 32; break;
        }
    }
    snprintf(tag, sizeof tag, "%s", argc > 1 ? argv[1] : "default");
    printf("%s %016llx\n", tag, (unsigned long long)acc);
    return (int)(acc & 0x7f) == memcmp(tag, tag, 0);
}
