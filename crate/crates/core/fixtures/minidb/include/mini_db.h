#ifndef MINI_DB_H
#define MINI_DB_H

#include <stddef.h>

#define MINI_MAGIC 0x4d494e49
#define MINI_CTX_SLOTS 16

typedef struct mini_db {
    char *name;
    char **keys;
    int count;
    int capacity;
} mini_db;

typedef struct mini_ctx {
    int magic;
    int len;
    int data[MINI_CTX_SLOTS];
} mini_ctx;

int mini_open(const char *name, mini_db **out);
void mini_close(mini_db *db);
int mini_put(mini_db *db, const char *key);
int mini_ctx_init(mini_ctx *ctx, int cap);
int mini_ctx_sum(const mini_ctx *ctx);

#endif
