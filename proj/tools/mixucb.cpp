#include <string>
#include <vector>

#include "mixucb/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mixucb::run_cli(args);
}
