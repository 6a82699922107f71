#include <iostream>

#include "npdet/cli.hpp"

int main(int argc, char** argv) { return npdet::run_cli(argc, argv, std::cout, std::cerr); }
