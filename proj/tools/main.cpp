#include "fcac/cli.hpp"

int main(int argc, char** argv) { return fcac::cli::run_cli(argc, argv); }
