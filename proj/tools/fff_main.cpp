#include <iostream>

#include "fff/cli.hpp"

int main(int argc, char** argv) { return fff::run_cli(argc, argv, std::cout, std::cerr); }
