#include <iostream>

#include "pmia/cli.hpp"

int main(int argc, char** argv) { return pmia::run_cli(argc, argv, std::cout, std::cerr); }
