#include <string>
#include <vector>

#include "robustreid/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return robustreid::cli::run_cli(std::move(args));
}
