#include <iostream>

#include "bvxl/cli.h"

int main(int argc, char** argv) { return bvxl::run_cli(argc, argv, std::cout, std::cerr); }
