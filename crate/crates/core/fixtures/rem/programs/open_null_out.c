#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    int rc = mini_open("test.db", NULL);
    printf("%d\n", rc);
    return 0;
}