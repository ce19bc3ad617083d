#include <iostream>
#include <string>
#include <vector>

#include "dzsl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dzsl::cli::run(args, std::cout, std::cerr);
}
