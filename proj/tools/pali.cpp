#include <iostream>

#include "pali/cli/cli.hpp"

int main(int argc, char** argv) { return pali::run_cli({argv + 1, argv + argc}, std::cout, std::cerr); }
