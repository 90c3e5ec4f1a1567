#include <stdio.h>
#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    if (mini_open("test.db", &db) != 0) {
        mini_close(db);
        return 1;
    }
    printf("opened %s\n", db->name);
    mini_close(db);
    return 0;
}
