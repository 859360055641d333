#include <string>
#include <vector>

#include "ptp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ptp::run_cli(args);
}
