#include <vector>

#include "xdreid/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return xdreid::cli::run(args);
}
