#include <iostream>

#include "rage/cli.hpp"

int main(int argc, char** argv) { return rage::run_cli(argc, argv, std::cout, std::cerr); }
