#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    int n = mini_ctx_init(NULL, 4);
    printf("%d\n", n);
    return 0;
}