#include "pdt_hooks.h" /* @pdttagger */
#include <stdio.h>
#include <stdlib.h>

#define N 64
#define CUTOFF 16

static void add(int n, const double *a, const double *b, double *c)
{
    for (int i = 0; i < n * n; i++)
        c[i] = a[i] + b[i];
}

static void mul_base(int n, const double *a, const double *b, double *c)
{
    for (int i = 0; i < n; i++)
        for (int j = 0; j < n; j++) {
            double s = 0.0;
            for (int k = 0; k < n; k++)
                s += a[i * n + k] * b[k * n + j];
            c[i * n + j] = s;
        }
}

/* Task-parallel block multiply; quadrants are computed independently. */
static void mul(int n, const double *a, const double *b, double *c)
{
    if (n <= CUTOFF) {
        mul_base(n, a, b, c);
        return;
    }
    double *t = calloc((size_t)n * n, sizeof *t);
    pdt_region_begin(13); /* @pdttagger */
    #pragma omp task shared(a, b, t)
    {
        add(n, a, b, t);
    }
    pdt_region_end(13); /* @pdttagger */
    #pragma omp taskwait
    mul_base(n, a, t, c);
    free(t);
}

int main(void)
{
    double *a = malloc(sizeof(double) * N * N);
    double *b = malloc(sizeof(double) * N * N);
    double *c = malloc(sizeof(double) * N * N);
    for (int i = 0; i < N * N; i++) {
        a[i] = (i % 7) * 0.5;
        b[i] = (i % 5) * 0.25;
    }
    pdt_region_begin(14); /* @pdttagger */
    #pragma omp parallel num_threads(pdt_region_threads(14)) /* @pdttagger +clause */
    {
        pdt_region_begin(15); /* @pdttagger */
        #pragma omp single
        mul(N, a, b, c);
        pdt_region_end(15); /* @pdttagger */
    }
    pdt_region_end(14); /* @pdttagger */
    double sum = 0.0;
    for (int i = 0; i < N * N; i++)
        sum += c[i];
    printf("checksum %.3f\n", sum);
    free(a);
    free(b);
    free(c);
    return 0;
}
