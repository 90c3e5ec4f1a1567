#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_ctx *ctx = malloc(sizeof(*ctx));
    if (ctx == NULL) {
        return 1;
    }
    printf("%d\n", mini_ctx_sum(ctx));
    free(ctx);
    return 0;
}