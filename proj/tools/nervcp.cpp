#include <string>
#include <vector>

#include "nervcp/cli.hpp"

int main(int argc, char** argv) {
  return nervcp::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
