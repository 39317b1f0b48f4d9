#include <iostream>

#include "storyweave/cli.hpp"

int main(int argc, char** argv) { return storyweave::cli::dispatch(argc, argv, std::cout, std::cerr); }
