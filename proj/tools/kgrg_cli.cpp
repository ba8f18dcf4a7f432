#include <iostream>

#include "kgrg/cli.hpp"

int main(int argc, char** argv) { return kgrg::dispatch(argc, argv, std::cout, std::cerr); }
