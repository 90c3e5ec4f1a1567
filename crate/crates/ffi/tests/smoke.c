#include <stdio.h>
#include <string.h>

#include "apsrgen.h"

static int fail(const char *what)
{
    const char *msg = apsrgen_last_error();
    fprintf(stderr, "%s: %s\n", what, msg ? msg : "(no message)");
    return 1;
}

/* argv: library dir, store path, app dir */
int main(int argc, char **argv)
{
    ApsrgenLibrary *lib = NULL;
    ApsrgenRuleSet *set = NULL;
    char *findings = NULL;
    size_t count = 0, compiled = 0;

    if (argc != 4)
        return 2;
    if (apsrgen_library_open(argv[1], &lib) != APSRGEN_STATUS_OK)
        return fail("open");
    if (apsrgen_rules_load(argv[2], lib, &set) != APSRGEN_STATUS_OK)
        return fail("rules");
    if (apsrgen_rules_count(set, &compiled, NULL) != APSRGEN_STATUS_OK)
        return fail("count");
    if (apsrgen_scan_dir(set, argv[3], &findings, &count) != APSRGEN_STATUS_OK)
        return fail("scan");
    printf("rules=%zu findings=%zu\n", compiled, count);
    if (apsrgen_library_open(NULL, &lib) != APSRGEN_STATUS_NULL_ARGUMENT || apsrgen_last_error() == NULL)
        return fail("null check");
    apsrgen_string_free(findings);
    apsrgen_rules_free(set);
    apsrgen_library_free(lib);
    return 0;
}
