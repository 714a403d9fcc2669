#include <iostream>

#include "mdat/cli.hpp"

int main(int argc, char** argv) { return mdat::run_cli(argc, argv, std::cout, std::cerr); }
