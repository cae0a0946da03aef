#include <iostream>

#include "vcor/cli.hpp"

int main(int argc, char** argv) {
  return vcor::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
