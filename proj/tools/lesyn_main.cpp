#include "lesyn/cli/run.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lesyn::cli::run_cli(args);
}
