#include "sadm/cli.hpp"

int main(int argc, char** argv) {
    return sadm::cli::run(std::vector<std::string>(argv, argv + argc));
}
