#include <vector>

#include "pipetteloc/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return pipetteloc::dispatch(args);
}
