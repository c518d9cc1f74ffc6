#include "paratune/cli.hpp"

int main(int argc, char** argv) { return paratune::cli::run(argc, argv); }
