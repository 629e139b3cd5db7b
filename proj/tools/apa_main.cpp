#include "apa/cli/cli.hpp"

int main(int argc, char** argv) { return apa::cli::run_main(argc, argv); }
