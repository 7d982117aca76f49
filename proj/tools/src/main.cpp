#include "bifdr_cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return bifdr::cli::run(argc, argv, std::cout, std::cerr); }
