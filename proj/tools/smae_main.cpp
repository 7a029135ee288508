#include <iostream>

#include "smae/cli.hpp"

int main(int argc, char** argv) { return smae::cli::run_cli(argc, argv, std::cout, std::cerr); }
