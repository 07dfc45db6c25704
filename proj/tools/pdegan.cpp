#include "pdegan/cli.hpp"

int main(int argc, char **argv) { return pdegan::cli::run(argc, argv); }
