#include <iostream>

#include "punc/cli.hpp"

int main(int argc, char** argv) { return punc::run_cli(argc, argv, std::cout, std::cerr); }
