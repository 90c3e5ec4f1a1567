#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    int flag;
    mini_ctx_init(&ctx, 1);
    if (flag) {
        printf("%d\n", mini_ctx_sum(&ctx));
    }
    return 0;
}