#include "mmae/cli.hpp"

int main(int argc, char** argv) { return mmae::cli::run_cli(argc, argv); }
