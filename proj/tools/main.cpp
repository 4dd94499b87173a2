#include <iostream>

#include "xlsum/commands.hpp"

int main(int argc, char** argv) {
  return xlsum::cli::run(argc, argv, std::cout, std::cerr);
}
