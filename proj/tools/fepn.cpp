#include "fepn/cli.hpp"

int main(int argc, char** argv) { return fepn::cli::run(argc, argv); }
