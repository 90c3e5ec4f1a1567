#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_ctx *ctx = NULL;
    mini_ctx_init(ctx, 8);
    return 0;
}