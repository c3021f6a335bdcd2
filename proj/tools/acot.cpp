#include <acot/rng.hpp>
#include <acot/tensor.hpp>

#include <cstdio>

int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::printf("acot: subcommands not wired up yet\n");
    return 1;
}
