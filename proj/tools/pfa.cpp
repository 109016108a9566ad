#include <iostream>

#include "pfa/cli.hpp"

int main(int argc, char** argv) { return pfa::run_cli(argc, argv, std::cout, std::cerr); }
