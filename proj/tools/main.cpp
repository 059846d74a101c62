#include "cli.hpp"

int main(int argc, char** argv) { return playclass::cli::run_cli(argc, argv); }
