/* CAS-loop micro-benchmarks: a shared counter and a Treiber stack.
 * Built at runtime by lfperf.harness and driven through ctypes. */
#define _GNU_SOURCE
#include <math.h>
#include <pthread.h>
#include <sched.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>
#include <unistd.h>

#if defined(__x86_64__) || defined(__i386__)
#include <x86intrin.h>
static inline uint64_t ticks(void) { return __rdtsc(); }
static inline void relax(void) { _mm_pause(); }
#else
static inline uint64_t ticks(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return (uint64_t)ts.tv_sec * 1000000000ull + (uint64_t)ts.tv_nsec;
}
static inline void relax(void) {}
#endif

#define LINE 64

typedef struct {
    uint64_t successes;
    uint64_t failures;
    uint64_t pushes;
    uint64_t pops;
    uint64_t empty_pops;
} thread_stats;

typedef struct {
    int structure;        /* 0 counter, 1 stack */
    int threads;
    int pin;
    int pw_exponential;
    double pw_ticks;      /* mean parallel work incl. back-off */
    double backoff_ticks;
    double cw_ticks;
    double duration_s;
    uint64_t seed;
    int stack_nodes;      /* pre-allocated node count */
    int initial_depth;
    int stride;           /* node index stride, spreads nodes over lines */
} bench_config;

typedef struct {
    uint64_t counter_final;
    int64_t stack_final_depth;
    int pinned;           /* 1 if every thread was pinned */
    int stack_ok;         /* no node lost or duplicated */
    double elapsed_s;
} bench_result;

static inline void spin_for(double n) {
    if (n <= 0) return;
    uint64_t end = ticks() + (uint64_t)n;
    while (ticks() < end) relax();
}

static inline uint64_t xorshift(uint64_t *s) {
    uint64_t x = *s;
    x ^= x << 13; x ^= x >> 7; x ^= x << 17;
    return *s = x;
}

static inline double draw_pw(const bench_config *c, uint64_t *rng) {
    double base = c->pw_ticks;
    if (c->pw_exponential) {
        double u = ((xorshift(rng) >> 11) + 1.0) / 9007199254740993.0;
        base = -log(u) * c->pw_ticks;
    }
    return base + c->backoff_ticks;
}

/* shared state, each on its own cache line */
static _Alignas(LINE) volatile uint64_t g_counter;
static _Alignas(LINE) volatile uint64_t g_top;     /* (tag << 32) | (index + 1), 0 = empty */
static _Alignas(LINE) volatile int g_stop;
static _Alignas(LINE) volatile int g_ready;
static uint32_t *g_next;

typedef struct {
    const bench_config *cfg;
    thread_stats *stats;
    int id;
    int pinned;
    uint32_t *pool;       /* private free nodes */
    int pool_len;
    int pool_cap;
} worker;

static int pin_to(int cpu) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(cpu, &set);
    return pthread_setaffinity_np(pthread_self(), sizeof set, &set) == 0;
}

static void counter_op(worker *w) {
    uint64_t v = __atomic_load_n(&g_counter, __ATOMIC_RELAXED);
    for (;;) {
        spin_for(w->cfg->cw_ticks);
        if (__atomic_compare_exchange_n(&g_counter, &v, v + 1, 0, __ATOMIC_SEQ_CST, __ATOMIC_RELAXED)) {
            w->stats->successes++;
            return;
        }
        w->stats->failures++;   /* v now holds the current value */
    }
}

static void stack_push(worker *w) {
    uint32_t node = w->pool[--w->pool_len];
    uint64_t top = __atomic_load_n(&g_top, __ATOMIC_RELAXED);
    for (;;) {
        spin_for(w->cfg->cw_ticks);
        g_next[node] = (uint32_t)(top & 0xffffffffu);
        uint64_t want = ((top >> 32) + 1) << 32 | (uint64_t)(node + 1);
        if (__atomic_compare_exchange_n(&g_top, &top, want, 0, __ATOMIC_SEQ_CST, __ATOMIC_RELAXED)) {
            w->stats->successes++;
            w->stats->pushes++;
            return;
        }
        w->stats->failures++;
    }
}

static void stack_pop(worker *w) {
    uint64_t top = __atomic_load_n(&g_top, __ATOMIC_ACQUIRE);
    for (;;) {
        spin_for(w->cfg->cw_ticks);
        uint32_t idx = (uint32_t)(top & 0xffffffffu);
        if (idx == 0) {
            w->stats->empty_pops++;
            return;
        }
        uint32_t next = __atomic_load_n(&g_next[idx - 1], __ATOMIC_RELAXED);
        uint64_t want = ((top >> 32) + 1) << 32 | next;
        if (__atomic_compare_exchange_n(&g_top, &top, want, 0, __ATOMIC_SEQ_CST, __ATOMIC_ACQUIRE)) {
            w->stats->successes++;
            w->stats->pops++;
            w->pool[w->pool_len++] = idx - 1;
            return;
        }
        w->stats->failures++;
    }
}

static void *run_worker(void *arg) {
    worker *w = arg;
    const bench_config *c = w->cfg;
    uint64_t rng = c->seed * 0x9E3779B97F4A7C15ull + (uint64_t)w->id + 1;
    if (rng == 0) rng = 1;
    w->pinned = c->pin ? pin_to(w->id % (int)sysconf(_SC_NPROCESSORS_ONLN)) : 0;
    __atomic_add_fetch(&g_ready, 1, __ATOMIC_SEQ_CST);
    while (__atomic_load_n(&g_ready, __ATOMIC_ACQUIRE) < c->threads) relax();
    while (!__atomic_load_n(&g_stop, __ATOMIC_RELAXED)) {
        spin_for(draw_pw(c, &rng));
        if (c->structure == 0) {
            counter_op(w);
        } else if (w->pool_len > 0 && (w->pool_len == w->pool_cap || (xorshift(&rng) & 1))) {
            stack_push(w);
        } else {
            stack_pop(w);
        }
    }
    return NULL;
}

static double now_s(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return ts.tv_sec + ts.tv_nsec * 1e-9;
}

int lf_bench(const bench_config *c, thread_stats *stats, bench_result *res) {
    int n = c->threads;
    if (n < 1) return -1;
    memset(stats, 0, sizeof(thread_stats) * n);
    memset(res, 0, sizeof *res);
    g_counter = 0;
    g_top = 0;
    g_stop = 0;
    g_ready = 0;

    int nodes = c->structure == 1 ? c->stack_nodes : 0;
    int stride = c->stride > 0 ? c->stride : 1;
    g_next = nodes ? calloc((size_t)nodes * stride, sizeof(uint32_t)) : NULL;
    worker *ws = calloc(n, sizeof(worker));
    pthread_t *ts = calloc(n, sizeof(pthread_t));
    if (!ws || !ts || (nodes && !g_next)) return -2;

    /* initial stack, then the remaining nodes are dealt to private pools */
    int used = 0;
    for (; used < c->initial_depth && used < nodes; used++) {
        uint32_t node = (uint32_t)(used * stride);
        g_next[node] = (uint32_t)(g_top & 0xffffffffu);
        g_top = (uint64_t)(node + 1);
    }
    int per = nodes ? (nodes - used + n - 1) / n : 0;
    for (int i = 0; i < n; i++) {
        ws[i].cfg = c;
        ws[i].stats = &stats[i];
        ws[i].id = i;
        ws[i].pool_cap = nodes;
        ws[i].pool = nodes ? malloc(sizeof(uint32_t) * nodes) : NULL;
        for (int k = 0; k < per && used < nodes; k++, used++)
            ws[i].pool[ws[i].pool_len++] = (uint32_t)(used * stride);
    }

    double t0 = now_s();
    for (int i = 0; i < n; i++) pthread_create(&ts[i], NULL, run_worker, &ws[i]);
    while (__atomic_load_n(&g_ready, __ATOMIC_ACQUIRE) < n) sched_yield();
    t0 = now_s();
    struct timespec d = {(time_t)c->duration_s, (long)((c->duration_s - (time_t)c->duration_s) * 1e9)};
    nanosleep(&d, NULL);
    __atomic_store_n(&g_stop, 1, __ATOMIC_SEQ_CST);
    res->pinned = c->pin ? 1 : 0;
    for (int i = 0; i < n; i++) {
        pthread_join(ts[i], NULL);
        if (!ws[i].pinned) res->pinned = 0;
    }
    res->elapsed_s = now_s() - t0;
    res->counter_final = g_counter;

    if (nodes) {
        /* walk the final stack and the pools: every node exactly once */
        char *seen = calloc((size_t)nodes * stride, 1);
        int ok = seen != NULL, count = 0;
        int64_t depth = 0;
        for (uint32_t idx = (uint32_t)(g_top & 0xffffffffu); ok && idx; idx = g_next[idx - 1]) {
            if (seen[idx - 1] || ++depth > nodes) ok = 0;
            else seen[idx - 1] = 1, count++;
        }
        for (int i = 0; ok && i < n; i++)
            for (int k = 0; k < ws[i].pool_len; k++) {
                if (seen[ws[i].pool[k]]) ok = 0;
                else seen[ws[i].pool[k]] = 1, count++;
            }
        res->stack_final_depth = depth;
        res->stack_ok = ok && count == nodes;
        free(seen);
    }
    for (int i = 0; i < n; i++) free(ws[i].pool);
    free(ws);
    free(ts);
    free(g_next);
    g_next = NULL;
    return 0;
}

/* ---- calibration ---- */

static int cmp_u64(const void *a, const void *b) {
    uint64_t x = *(const uint64_t *)a, y = *(const uint64_t *)b;
    return x < y ? -1 : x > y;
}

uint64_t lf_timer_resolution(void) {
    uint64_t best = UINT64_MAX;
    for (int i = 0; i < 1000; i++) {
        uint64_t a = ticks(), b = ticks();
        while (b == a) b = ticks();
        if (b - a < best) best = b - a;
    }
    return best;
}

static _Alignas(LINE) volatile uint64_t c_word;
static _Alignas(LINE) volatile uint64_t c_turn;

typedef struct {
    int cpu;
    int trials;
    int mode;             /* 0 cas, 1 read */
    int me;
    uint64_t *samples;
    int pinned;
} cal_arg;

static void *cal_worker(void *p) {
    cal_arg *a = p;
    a->pinned = a->cpu >= 0 ? pin_to(a->cpu) : 0;
    for (int t = 0; t < a->trials; t++) {
        while (__atomic_load_n(&c_turn, __ATOMIC_ACQUIRE) % 2 != (uint64_t)a->me) relax();
        if (a->me == 0) {
            uint64_t s = ticks();
            if (a->mode == 0) {
                uint64_t v = t;
                __atomic_compare_exchange_n(&c_word, &v, v + 1, 0, __ATOMIC_SEQ_CST, __ATOMIC_RELAXED);
            } else {
                (void)__atomic_load_n(&c_word, __ATOMIC_ACQUIRE);
            }
            a->samples[t] = ticks() - s;
        } else {
            /* leave the line modified in this core's cache */
            __atomic_store_n(&c_word, (uint64_t)(t + 1), __ATOMIC_SEQ_CST);
            __atomic_store_n(&c_word, (uint64_t)t, __ATOMIC_SEQ_CST);
        }
        __atomic_add_fetch(&c_turn, 1, __ATOMIC_ACQ_REL);
    }
    return NULL;
}

/* Median latency of a CAS (mode 0) or Read (mode 1) on a line last written
 * by another thread pinned to cpu_other. Returns 0 on failure. */
uint64_t lf_calibrate(int mode, int cpu_self, int cpu_other, int trials, int *pinned) {
    uint64_t *s = malloc(sizeof(uint64_t) * trials);
    if (!s) return 0;
    c_word = 0;
    c_turn = 1;
    cal_arg a = {cpu_self, trials, mode, 0, s, 0};
    cal_arg b = {cpu_other, trials, mode, 1, NULL, 0};
    pthread_t ta, tb;
    pthread_create(&ta, NULL, cal_worker, &a);
    pthread_create(&tb, NULL, cal_worker, &b);
    pthread_join(ta, NULL);
    pthread_join(tb, NULL);
    *pinned = a.pinned && b.pinned;
    qsort(s, trials, sizeof(uint64_t), cmp_u64);
    uint64_t med = s[trials / 2];
    free(s);
    return med;
}

/* Same-thread control: the line never leaves this core. */
uint64_t lf_calibrate_local(int mode, int trials) {
    uint64_t *s = malloc(sizeof(uint64_t) * trials);
    if (!s) return 0;
    c_word = 0;
    for (int t = 0; t < trials; t++) {
        uint64_t st = ticks();
        if (mode == 0) {
            uint64_t v = t;
            __atomic_compare_exchange_n(&c_word, &v, v + 1, 0, __ATOMIC_SEQ_CST, __ATOMIC_RELAXED);
        } else {
            (void)__atomic_load_n(&c_word, __ATOMIC_ACQUIRE);
        }
        s[t] = ticks() - st;
    }
    qsort(s, trials, sizeof(uint64_t), cmp_u64);
    uint64_t med = s[trials / 2];
    free(s);
    return med;
}

uint64_t lf_ticks(void) { return ticks(); }
