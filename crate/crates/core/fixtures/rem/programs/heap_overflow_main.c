#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    char *buf = malloc(8);
    mini_open("test.db", &db);
    for (int i = 0; i <= 8; i++) {
        buf[i] = (char)i;
    }
    mini_close(db);
    free(buf);
    return 0;
}