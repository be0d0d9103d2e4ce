#include "mnum/cli.hpp"

int main(int argc, char** argv) { return mnum::cli::main(argc, argv); }
