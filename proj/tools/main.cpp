#include <iostream>

#include "multienv/cli.hpp"

int main(int argc, char** argv) { return multienv::run_cli(argc, argv, std::cout, std::cerr); }
