#include <stdlib.h>
#include <string.h>

#include "mini_db.h"

int mini_open(const char *name, mini_db **out)
{
    mini_db *db = calloc(1, sizeof(*db));
    if (db == NULL) {
        return -1;
    }
    db->name = strdup(name ? name : "");
    db->capacity = 4;
    db->keys = calloc((size_t)db->capacity, sizeof(char *));
    *out = db;
    if (name == NULL || name[0] == '\0') {
        return -2;
    }
    return 0;
}

void mini_close(mini_db *db)
{
    int i;
    if (db == NULL) {
        return;
    }
    for (i = 0; i < db->count; i++) {
        free(db->keys[i]);
    }
    free(db->keys);
    free(db->name);
    free(db);
}

int mini_put(mini_db *db, const char *key)
{
    if (db->count >= db->capacity) {
        return -1;
    }
    db->keys[db->count] = strdup(key ? key : "");
    db->count++;
    return db->count;
}

int mini_ctx_init(mini_ctx *ctx, int cap)
{
    int i;
    ctx->magic = MINI_MAGIC;
    ctx->len = cap > MINI_CTX_SLOTS ? MINI_CTX_SLOTS : (cap < 0 ? 0 : cap);
    for (i = 0; i < ctx->len; i++) {
        ctx->data[i] = i + 1;
    }
    return ctx->len;
}

int mini_ctx_sum(const mini_ctx *ctx)
{
    int i;
    int sum = 0;
    if (ctx->magic != MINI_MAGIC) {
        return -1;
    }
    for (i = 0; i < ctx->len; i++) {
        sum += ctx->data[i];
    }
    return sum;
}
