#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    mini_open("test.db", &db);
    char *copy = malloc(64);
    snprintf(copy, 64, "%s", db->name);
    copy = NULL;
    mini_close(db);
    return 0;
}