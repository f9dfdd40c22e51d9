#include <iostream>
#include <string>
#include <vector>

#include "coursepilot/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return coursepilot::cli::cli_main(args, std::cin, std::cout, std::cerr);
}
