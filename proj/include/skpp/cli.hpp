#pragma once

namespace skpp {

// Entry point shared by the binary and the tests.
// Exit codes: 0 success, 2 config/usage error, 3 data error, 4 numeric failure.
int run_cli(int argc, const char* const* argv);

} // namespace skpp
