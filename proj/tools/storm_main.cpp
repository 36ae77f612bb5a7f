#include "storm/cli/cli.hpp"

int main(int argc, char** argv) { return storm::cli::run_cli(argc, argv); }
