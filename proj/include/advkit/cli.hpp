#pragma once

#include <string>
#include <vector>

namespace advkit::cli {

// Entry point used by both the binary and the tests.
// Exit codes: 0 ok, 1 numeric failure, 2 usage/config error.
int run(std::vector<std::string> args);

int run(int argc, char** argv);

} // namespace advkit::cli
