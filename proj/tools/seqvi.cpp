#include <string>
#include <vector>

#include "seqvi/cli.hpp"

int main(int argc, char** argv) {
  return seqvi::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
