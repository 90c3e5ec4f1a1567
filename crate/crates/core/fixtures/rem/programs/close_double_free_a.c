#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    mini_open("test.db", &db);
    mini_close(db);
    mini_close(db);
    return 0;
}