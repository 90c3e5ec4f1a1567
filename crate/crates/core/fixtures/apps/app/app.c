#include <stdio.h>
#include <stdlib.h>

#include "mini_db.h"

struct app {
    mini_db *handle;
};

int app_checksum(int cap)
{
    mini_ctx *ctx = malloc(sizeof(*ctx));
    mini_ctx_init(ctx, cap);
    int sum = mini_ctx_sum(ctx);
    free(ctx);
    return sum;
}

int app_open(struct app *a, const char *name)
{
    mini_db *db = NULL;
    int rc = mini_open(name, &db);
    if (rc != 0) {
        fprintf(stderr, "cannot open %s\n", name);
        return rc;
    }
    a->handle = db;
    return 0;
}

void app_store(struct app *a, const char *key)
{
    mini_db *db = a->handle;
    if (key == NULL) {
        mini_close(db);
    }
    mini_put(db, key);
}

int main(int argc, char **argv)
{
    struct app a;
    mini_ctx ctx;
    if (app_open(&a, argc > 1 ? argv[1] : "app.db") != 0) {
        return 1;
    }
    app_store(&a, "k");
    mini_ctx_init(&ctx, 4);
    printf("%d %d\n", mini_ctx_sum(&ctx), app_checksum(3));
    mini_close(a.handle);
    return 0;
}
