#include <iostream>

#include "mvcount_cli/cli.hpp"

int main(int argc, char** argv) { return mvcount::cli::run(argc, argv, std::cout, std::cerr); }
