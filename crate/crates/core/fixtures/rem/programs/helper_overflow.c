#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

static void fill(char *b, int n)
{
    for (int i = 0; i < n; i++) {
        b[i] = 0x41;
    }
}

int main(void)
{
    mini_db *db = NULL;
    char *buf = malloc(16);
    mini_open("test.db", &db);
    fill(buf, 32);
    mini_close(db);
    free(buf);
    return 0;
}