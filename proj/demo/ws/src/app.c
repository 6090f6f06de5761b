#include <stdio.h>
#include <stdlib.h>

/* toy record parser: byte 0 = slot count, byte 1 = mode flag */
int main(int argc, char** argv) {
    if (argc < 2) return 2;
    FILE* f = fopen(argv[1], "rb");
    if (!f) return 2;
    unsigned char header[2] = {0, 0};
    size_t n = fread(header, 1, 2, f);
    fclose(f);
    if (n < 1) return 2;
    unsigned nslots = header[0];
    if (header[1] == 0xff) {
        char* q = (char*)0;
        return q[0];
    }
    char* slots = (char*)malloc(62);
    if (!slots) return 2;
    for (unsigned i = 0; i < nslots; i++) {
        slots[i] = 'x';
    }
    printf("filled %u slots\n", nslots);
    free(slots);
    return 0;
}
