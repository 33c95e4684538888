#include "cataract/cli.hpp"

int main(int argc, char** argv) {
    return cataract::cli::run(argc, argv);
}
