#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    char small[4];
    if (mini_open("test.db", &db) != 0) {
        return 1;
    }
    mini_put(db, strcpy(small, "much too long for the buffer"));
    mini_close(db);
    return 0;
}