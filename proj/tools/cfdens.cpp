#include "cfdens/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
  return cfdens::cli::main(argc, argv, std::cout, std::cerr);
}
