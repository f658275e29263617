#include "mira/cli.hpp"

int main(int argc, char** argv) { return mira::cli_main(argc, argv); }
