#include <limits.h>
#include <string.h>

typedef struct sax_handler sax_handler;
int sax_parse_memory(sax_handler *sax, const char *buffer, int size, int recovery);

int main(void)
{
    const char *buffer = "<doc><item>1</item></doc>";
    int rc = sax_parse_memory(NULL, buffer, INT_MAX, 0);
    return rc;
}
