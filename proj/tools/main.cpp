#include <string>
#include <vector>

#include "timnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return timnet::cli::run_cli(args);
}
