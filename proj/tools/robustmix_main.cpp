// Placeholder entry point; the subcommand wiring lands with the cli header.

#include <cstdio>

int main() {
    std::fprintf(stderr, "robustmix: cli not wired up yet\n");
    return 2;
}
