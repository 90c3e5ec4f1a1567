#include <stdio.h>
#include "mini_db.h"

int main(void)
{
    mini_ctx ctx;
    int n = mini_ctx_init(NULL, 4);
    printf("%d %d\n", n, mini_ctx_sum(&ctx));
    return 0;
}
