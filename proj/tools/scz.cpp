#include <iostream>

#include "scz/cli.hpp"

int main(int argc, char** argv) { return scz::run_cli({argv, argv + argc}, std::cout, std::cerr); }
