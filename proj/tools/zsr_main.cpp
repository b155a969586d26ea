#include <string>
#include <vector>

#include "zsr/cli.hpp"

int main(int argc, char** argv) {
  return zsr::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
