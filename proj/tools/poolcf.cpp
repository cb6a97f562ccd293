#include "poolcf/cli.hpp"

int main(int argc, char** argv) { return poolcf::cli::main(argc, argv); }
