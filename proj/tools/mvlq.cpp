#include "mvlq/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return mvlq::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
