#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    int n = mini_put(db, "key");
    printf("%d\n", n);
    return 0;
}