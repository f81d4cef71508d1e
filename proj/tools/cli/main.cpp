#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
    cpvit::cli::configure_logging();
    std::vector<std::string> args(argv + 1, argv + argc);
    return cpvit::cli::run_cli(args, std::cout, std::cerr);
}
