#pragma once

namespace mira {

// Entry point behind the `mira` binary; callable from tests.
// Exit codes: 0 success, 1 usage error, 2 runtime error.
int cli_main(int argc, const char* const* argv);

}  // namespace mira
