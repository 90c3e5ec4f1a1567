#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    int n = mini_ctx_init(&ctx, 40);
    assert(n == 40);
    printf("%d\n", mini_ctx_sum(&ctx));
    return 0;
}