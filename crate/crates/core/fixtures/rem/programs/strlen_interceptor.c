#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(int argc, char **argv)
{
    mini_db *db = NULL;
    const char *data = argc > 1 ? argv[1] : NULL;
    if (mini_open("test.db", &db) != 0) {
        return 1;
    }
    int rc = mini_put(db, data) + (int)strlen(data);
    printf("%d\n", rc);
    mini_close(db);
    return 0;
}