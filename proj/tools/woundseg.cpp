#include "woundseg/cli/app.hpp"

int main(int argc, char** argv) { return woundseg::cli::run_cli(argc, argv); }
