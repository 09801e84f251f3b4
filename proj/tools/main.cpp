#include <iostream>
#include <string>
#include <vector>

#include "empdistill/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return empdistill::cli::run(args, std::cout, std::cerr);
}
