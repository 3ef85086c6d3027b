#include "laneatt/cli.hpp"

int main(int argc, char** argv) {
    return laneatt::run_cli({argv + 1, argv + argc});
}
