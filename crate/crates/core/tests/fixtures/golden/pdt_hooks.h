#ifndef PDT_HOOKS_H
#define PDT_HOOKS_H

#ifdef __cplusplus
extern "C" {
#endif

void pdt_region_begin(int id);
void pdt_region_end(int id);
int pdt_region_threads(int id);

#ifdef __cplusplus
}
#endif

#endif
