#include <iostream>

#include "ldjt/cli.hpp"

int main(int argc, char** argv) { return ldjt::cli::main(argc, argv, std::cout, std::cerr); }
