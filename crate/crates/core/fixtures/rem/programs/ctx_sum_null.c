#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    printf("%d\n", mini_ctx_sum(NULL));
    return 0;
}