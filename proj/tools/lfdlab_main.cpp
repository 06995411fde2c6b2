#include "lfdlab/cli.hpp"

int main(int argc, char** argv) { return lfdlab::cli::run(argc, argv); }
