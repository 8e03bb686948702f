// CLI entry point; subcommands are wired up in cli.hpp.

#include "glcn/cli.hpp"

int main(int argc, char** argv) { return glcn::cli_main(argc, argv); }
