#include "ucl/cli.hpp"

int main(int argc, char** argv) { return ucl::cli_main(argc, argv); }
