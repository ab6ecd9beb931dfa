#include "cli.hpp"

int main(int argc, char** argv) { return otnas::cli::run_cli(argc, argv); }
