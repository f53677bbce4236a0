#include <iostream>

#include "topsal/cli/app.hpp"

int main(int argc, char** argv) { return topsal::cli::main_entry(argc, argv, std::cout, std::cerr); }
