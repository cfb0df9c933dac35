#include "advkit/cli.hpp"

int main(int argc, char** argv) { return advkit::cli::run(argc, argv); }
