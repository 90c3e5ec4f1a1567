#ifndef APSRGEN_H
#define APSRGEN_H

/* Generated from the Rust sources by cbindgen. Do not edit. */

#include <stdbool.h>
#include <stddef.h>

typedef enum ApsrgenStatus {
  APSRGEN_STATUS_OK = 0,
  APSRGEN_STATUS_NULL_ARGUMENT = 1,
  APSRGEN_STATUS_INVALID_UTF8 = 2,
  APSRGEN_STATUS_NOT_FOUND = 3,
  APSRGEN_STATUS_IO = 4,
  APSRGEN_STATUS_PARSE = 5,
  APSRGEN_STATUS_OUT_OF_RANGE = 6,
  APSRGEN_STATUS_INTERNAL = 7,
} ApsrgenStatus;

// A loaded C library: configuration, parsed sources and symbols.
typedef struct ApsrgenLibrary ApsrgenLibrary;

// One parsed runtime error report.
typedef struct ApsrgenRem ApsrgenRem;

// Detection rules compiled from a rule store.
typedef struct ApsrgenRuleSet ApsrgenRuleSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into this library on the same thread.
const char *apsrgen_last_error(void);

// Library version as a static string.
const char *apsrgen_version(void);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void apsrgen_string_free(char *s);

// Open the library described by `<dir>/library.toml`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum ApsrgenStatus apsrgen_library_open(const char *dir, struct ApsrgenLibrary **out);

// # Safety
// `lib` must come from [`apsrgen_library_open`] or be NULL.
void apsrgen_library_free(struct ApsrgenLibrary *lib);

// Number of APIs listed in the library configuration.
//
// # Safety
// `lib` must be a live handle and `out` a valid pointer.
enum ApsrgenStatus apsrgen_library_api_count(const struct ApsrgenLibrary *lib, size_t *out);

// Name of the listed API at `index`.
//
// # Safety
// `lib` must be a live handle and `out` a valid pointer.
enum ApsrgenStatus apsrgen_library_api_name(const struct ApsrgenLibrary *lib,
                                            size_t index,
                                            char **out);

// JSON API record (declaration, body, parameters) for `api`.
//
// # Safety
// `lib` must be a live handle, `api` NUL-terminated, `out` valid.
enum ApsrgenStatus apsrgen_library_extract_json(const struct ApsrgenLibrary *lib,
                                                const char *api,
                                                char **out);

// Parse sanitizer or valgrind output. Unrecognized text yields a report of
// kind `unknown` rather than an error.
//
// # Safety
// `text` must be NUL-terminated and `out` valid.
enum ApsrgenStatus apsrgen_rem_parse(const char *text, struct ApsrgenRem **out);

// # Safety
// `r` must come from [`apsrgen_rem_parse`] or be NULL.
void apsrgen_rem_free(struct ApsrgenRem *r);

// # Safety
// `r` must be a live handle and `out` valid.
enum ApsrgenStatus apsrgen_rem_error_kind(const struct ApsrgenRem *r, char **out);

// Normalized signature text used for clustering, relative to the
// library's symbols.
//
// # Safety
// Both handles must be live and `out` valid.
enum ApsrgenStatus apsrgen_rem_signature(const struct ApsrgenRem *r,
                                         const struct ApsrgenLibrary *lib,
                                         char **out);

// Whether the fault originates inside `api`, entered from the call made
// by `program_source` (the harness that produced the report).
//
// # Safety
// Handles must be live, strings NUL-terminated and `out` valid.
enum ApsrgenStatus apsrgen_rem_is_api_related(const struct ApsrgenRem *r,
                                              const struct ApsrgenLibrary *lib,
                                              const char *api,
                                              const char *program_source,
                                              bool *out);

// Category name of a rule sentence.
//
// # Safety
// `text` must be NUL-terminated and `out` valid.
enum ApsrgenStatus apsrgen_classify(const char *text, char **out);

// Compile the concrete rules of a store. `lib` may be NULL, in which case
// release APIs must be named in the rule text and no allocator is treated
// as may-fail.
//
// # Safety
// `store_path` must be NUL-terminated, `lib` live or NULL, `out` valid.
enum ApsrgenStatus apsrgen_rules_load(const char *store_path,
                                      const struct ApsrgenLibrary *lib,
                                      struct ApsrgenRuleSet **out);

// # Safety
// `set` must come from [`apsrgen_rules_load`] or be NULL.
void apsrgen_rules_free(struct ApsrgenRuleSet *set);

// Number of compiled rules, and of concrete rules that did not compile.
//
// # Safety
// `set` must be a live handle; either output may be NULL.
enum ApsrgenStatus apsrgen_rules_count(const struct ApsrgenRuleSet *set,
                                       size_t *compiled,
                                       size_t *not_compilable);

// Query text for the rule at `index`.
//
// # Safety
// `set` must be a live handle and `out` valid.
enum ApsrgenStatus apsrgen_rules_emit_query(const struct ApsrgenRuleSet *set,
                                            size_t index,
                                            char **out);

// Scan every C file under `app_dir`; findings are written as JSON lines
// and their number stored in `count` when it is not NULL.
//
// # Safety
// `set` must be live, `app_dir` NUL-terminated, `out` valid.
enum ApsrgenStatus apsrgen_scan_dir(const struct ApsrgenRuleSet *set,
                                    const char *app_dir,
                                    char **out,
                                    size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APSRGEN_H */
