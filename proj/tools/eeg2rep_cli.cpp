#include "eeg2rep/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return eeg2rep::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
