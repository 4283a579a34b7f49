#include "csf/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return csf::run_cli(argc, argv, std::cout, std::cerr); }
