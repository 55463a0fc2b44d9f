#include <iostream>
#include <string>
#include <vector>

#include "skelfuse_cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return skelfuse::cli::dispatch(args, std::cout, std::cerr);
}
