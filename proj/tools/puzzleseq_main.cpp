#include <vector>

#include "puzzleseq/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return puzzleseq::run_cli(args);
}
