#include <iostream>

#include "scinet/cli.hpp"

int main(int argc, char** argv) { return scinet::cli::run(argc, argv, std::cout, std::cerr); }
