#include "predgen/cli.hpp"

int main(int argc, char** argv) { return predgen::cli::run(argc, argv); }
