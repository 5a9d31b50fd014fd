#pragma once

#include <string>
#include <vector>

namespace puzzleseq {

// Dispatch for the puzzleseq binary; also callable from tests. args excludes
// the program name. Exit codes: 0 success, 2 config/validation error,
// 3 data error, 4 numeric failure, 1 anything else.
int run_cli(const std::vector<std::string>& args);

}  // namespace puzzleseq
