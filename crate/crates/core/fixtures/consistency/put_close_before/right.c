#include "mini_db.h"

int main(void)
{
    mini_db *db = NULL;
    if (mini_open("test.db", &db) != 0) {
        mini_close(db);
        return 1;
    }
    if (mini_put(db, "key") < 0) {
        mini_close(db);
        return 1;
    }
    mini_close(db);
    return 0;
}
