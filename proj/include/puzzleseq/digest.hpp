#pragma once

#include <cstdint>
#include <string>

namespace puzzleseq {

// FNV-1a 64-bit over a canonical string (typically a compact JSON dump).
// Used to stamp config/artifact lineage into outputs so stale combinations
// are rejected, not to resist adversaries.
std::uint64_t fnv1a64(const std::string& s);

// 16-hex-digit form used in artifact headers.
std::string digest_hex(const std::string& s);

}  // namespace puzzleseq
