#include <iostream>

#include "lgdg_cli/cli.hpp"

int main(int argc, char** argv) { return lgdg::cli::run(argc, argv, std::cout, std::cerr); }
