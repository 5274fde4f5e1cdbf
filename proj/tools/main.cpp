#include "fcd/cli/app.hpp"

int main(int argc, char** argv) { return fcd::cli::run(argc, argv); }
