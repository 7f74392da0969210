/* #pragma omp parallel   -- inside a comment, not a region */
#include <stdio.h>

static const char *msg = "#pragma omp parallel { not code }";

#define LOOP(n) for (int i_ = 0; i_ < (n); i_++)

int busy(int n)
{
    int acc = 0;
    // #pragma omp parallel for  (commented out)
    #pragma omp parallel for reduction(+:acc) /* trailing comment */
    for (int i = 0; i < n; i++) {
        acc += i;
    }
    do
        #pragma omp parallel
        { acc += 1; }
    while (0);
    while (acc > 1000)
        #pragma omp parallel
        {
            acc--;
        }
    #pragma omp parallel
    {
        #pragma omp barrier
        #pragma omp task
        {
            acc += msg[0] == '#';
        }
    }
    switch (n) {
    case 1:
        #pragma omp parallel
        acc += '{';
        break;
    default:
        break;
    }
    return acc;
}
