#include "sgmim/cli.hpp"

int main(int argc, char** argv) { return sgmim::cli::run(argc, argv); }
