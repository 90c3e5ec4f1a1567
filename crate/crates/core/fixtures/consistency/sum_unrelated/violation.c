#include <stdio.h>
#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    mini_ctx_init(&ctx, 4);
    int sum = mini_ctx_sum(&ctx);
    printf("total=%d\n", sum);
    return 0;
}
