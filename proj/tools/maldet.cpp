#include <string>
#include <vector>

#include "maldet/cli.hpp"

int main(int argc, char** argv) {
  return maldet::cli::run(std::vector<std::string>(argv, argv + argc));
}
