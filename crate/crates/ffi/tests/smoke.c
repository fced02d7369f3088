#include <stdio.h>
#include <string.h>
#include "abc_ffi.h"

int main(int argc, char **argv) {
    AbcStore *store = NULL;
    const uint8_t junk[3] = {1, 2, 3};
    if (abc_store_new(junk, sizeof junk, &store) != ABC_STATUS_DECODE_ERROR || store != NULL) return 10;
    if (abc_last_error_message() == NULL) return 11;

    if (argc < 2) return 12;
    FILE *f = fopen(argv[1], "rb");
    if (!f) return 13;
    static char text[1 << 16];
    size_t n = fread(text, 1, sizeof text - 1, f);
    fclose(f);
    text[n] = 0;

    int32_t code = -1;
    char *json = NULL;
    if (abc_scenario_run(text, &code, &json) != ABC_STATUS_OK) return 14;
    if (code != 0 || json == NULL || json[0] != '{') return 15;
    abc_string_free(json);
    puts("ok");
    return 0;
}
