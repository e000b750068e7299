#include <iostream>

#include "rlvo/cli.hpp"

int main(int argc, char** argv) { return rlvo::run_cli(argc, argv, std::cout, std::cerr); }
