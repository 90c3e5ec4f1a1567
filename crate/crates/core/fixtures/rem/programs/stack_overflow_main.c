#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    int extra[4];
    mini_ctx_init(&ctx, 4);
    for (int i = 0; i <= 4; i++) {
        extra[i] = mini_ctx_sum(&ctx);
    }
    printf("%d\n", extra[0]);
    return 0;
}