#include <iostream>

#include "metasched/cli.hpp"

int main(int argc, char** argv) { return metasched::run_cli(argc, argv, std::cout, std::cerr); }
