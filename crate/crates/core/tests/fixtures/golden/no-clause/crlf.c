#include "pdt_hooks.h" /* @pdttagger */
int scale(int *x, int n)
{
    int s = 0;
pdt_region_begin(0); /* @pdttagger */
#pragma omp parallel for reduction(+:s)
    for (int i = 0; i < n; i++)
        s += x[i] * 2;
pdt_region_end(0); /* @pdttagger */
    return s;
}

void touch(int *x)
{
    if (x)
{ pdt_region_begin(1); /* @pdttagger */
#pragma omp parallel
        x[0] = 1;
pdt_region_end(1); } /* @pdttagger */
    else
        return;
}