#include <iostream>

#include "cfp/cli.hpp"

int main(int argc, char** argv) { return cfp::run_cli(argc, argv, std::cout, std::cerr); }
