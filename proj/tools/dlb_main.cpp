#include <iostream>
#include <string>
#include <vector>

#include "dlb/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return dlb::run_command(args, std::cout, std::cerr);
}
