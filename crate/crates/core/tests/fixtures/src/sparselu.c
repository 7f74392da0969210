#include <stdio.h>
#include <stdlib.h>

#define NB 8
#define BS 4

static double blocks[NB][NB][BS * BS];
static int present[NB][NB];

static void lu0(double *d)
{
    for (int k = 0; k < BS; k++)
        for (int i = k + 1; i < BS; i++) {
            d[i * BS + k] /= d[k * BS + k];
            for (int j = k + 1; j < BS; j++)
                d[i * BS + j] -= d[i * BS + k] * d[k * BS + j];
        }
}

static void genmat(void)
{
    #pragma omp parallel for collapse(2)
    for (int i = 0; i < NB; i++)
        for (int j = 0; j < NB; j++) {
            present[i][j] = (i == j) || ((i + j) % 3 == 0);
            for (int k = 0; k < BS * BS; k++)
                blocks[i][j][k] = present[i][j] ? 1.0 + (double)((i * 7 + j * 3 + k) % 11) + (k % (BS + 1) == 0 ? 40.0 : 0.0) : 0.0;
        }
}

static void report(const char *what)
{
    #pragma omp single
    {
        printf("%s\n", what); /* "{" in strings must not confuse the scanner */
    }
}

int main(void)
{
    genmat();
    report("factorizing { blocks }");
    #pragma omp parallel for schedule(dynamic) \
        shared(blocks)
    for (int kk = 0; kk < NB; kk++) {
        if (present[kk][kk])
            lu0(blocks[kk][kk]);
    }
    double sum = 0.0;
    for (int i = 0; i < NB; i++)
        for (int k = 0; k < BS * BS; k++)
            sum += blocks[i][i][k];
    printf("checksum %.4f\n", sum);
    return 0;
}
