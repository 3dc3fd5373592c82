#include <iostream>

#include "vfm/cli.hpp"

int main(int argc, char** argv) { return vfm::cli_main(argc, argv, std::cout, std::cerr); }
