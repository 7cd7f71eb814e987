#include <iostream>

#include "rlbvae/harness.hpp"

int main(int argc, char** argv) { return rlbvae::cli_dispatch(argc, argv, std::cout, std::cerr); }
