#include <assert.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

static mini_db *handle;

int main(int argc, char **argv)
{
    (void)argv;
    if (mini_open("other.db", &handle) != 0) {
        return 1;
    }
    mini_put(handle, "a");
    mini_close(handle);
    if (argc > 0) {
        int n = mini_put(handle, "b");
        printf("%d\n", n);
    }
    return 0;
}