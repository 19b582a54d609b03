#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return lgm::cli::run(argc, argv, std::cout, std::cerr); }
