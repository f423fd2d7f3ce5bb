#include <iostream>

#include "noisynet/cli.hpp"

int main(int argc, char** argv) { return noisynet::cli::run(argc, argv, std::cout, std::cerr); }
