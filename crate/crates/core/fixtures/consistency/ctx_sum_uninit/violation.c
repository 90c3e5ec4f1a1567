#include <stdio.h>
#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    int sum = mini_ctx_sum(&ctx);
    printf("sum=%d\n", sum);
    return 0;
}
