#include <iostream>

#include "unicd/cli.hpp"

int main(int argc, char** argv) { return unicd::run_cli(argc, argv, std::cout, std::cerr); }
