#include "marl/cliapp.hpp"

int main(int argc, char** argv) { return marl::cli::run_cli(argc, argv); }
