#include "pdt_hooks.h" /* @pdttagger */
#include <stdio.h>
#include <string.h>

#define SIZE 8

static int ok(int n, const char *a)
{
    for (int i = 0; i < n; i++) {
        char p = a[i];
        for (int j = i + 1; j < n; j++) {
            char q = a[j];
            if (q == p || q == p - (j - i) || q == p + (j - i))
                return 0;
        }
    }
    return 1;
}

static void solve(int n, int j, char *a, int *count)
{
    if (n == j) {
        #pragma omp atomic
        (*count)++;
        return;
    }
    for (int i = 0; i < n; i++) {
        char b[SIZE];
        memcpy(b, a, (size_t)j);
        b[j] = (char)i;
        if (ok(j + 1, b))
            { pdt_region_begin(7); /* @pdttagger */
            #pragma omp task firstprivate(b, i) shared(count)
            solve(n, j + 1, b, count);
            pdt_region_end(7); } /* @pdttagger */
    }
    #pragma omp taskwait
}

int main(void)
{
    int count = 0;
    char a[SIZE];
    pdt_region_begin(8); /* @pdttagger */
    #pragma omp parallel num_threads(pdt_region_threads(8)) /* @pdttagger +clause */
    { pdt_region_begin(9); /* @pdttagger */
    #pragma omp single
    solve(SIZE, 0, a, &count);
    pdt_region_end(9); } /* @pdttagger */
    pdt_region_end(8); /* @pdttagger */
    printf("solutions %d\n", count);
    return count == 92 ? 0 : 1;
}
