#include <iostream>

#include "unlearn/cli.hpp"

int main(int argc, char** argv) { return unlearn::run_cli(argc, argv, std::cout, std::cerr); }
