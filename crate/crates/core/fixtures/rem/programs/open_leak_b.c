#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    int rc = mini_open("", &db);
    printf("rc=%d\n", rc);
    db = NULL;
    return 0;
}