#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    char *tmp = strdup("scratch");
    mini_open("test.db", &db);
    free(tmp);
    free(tmp);
    mini_close(db);
    return 0;
}