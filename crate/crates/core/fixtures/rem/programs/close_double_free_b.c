#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

static void shutdown(mini_db *db)
{
    mini_close(db);
}

int main(void)
{
    mini_db *db = NULL;
    if (mini_open("x.db", &db) == 0) {
        shutdown(db);
    }
    mini_close(db);
    return 0;
}