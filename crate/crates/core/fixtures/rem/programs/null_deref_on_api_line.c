#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    int *bonus = NULL;
    mini_ctx_init(&ctx, 2);
    int v = mini_ctx_sum(&ctx) + *bonus;
    printf("%d\n", v);
    return 0;
}