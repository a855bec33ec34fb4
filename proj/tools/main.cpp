#include "adaseg/cli.hpp"

int main(int argc, char** argv) { return adaseg::cli::run(argc, argv); }
