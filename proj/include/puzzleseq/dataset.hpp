#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puzzleseq/puzzle.hpp"
#include "puzzleseq/tokenizer.hpp"

namespace puzzleseq {

// One puzzle in a dataset manifest. `source` is either "synth:<seed>" for the
// procedural generator or "file:<path>" for an ingested image.
struct ManifestEntry {
    std::string id;
    std::string source;
    std::size_t grid_side = 0;
    std::size_t missing_count = 0;
    std::uint64_t shuffle_seed = 0;
};

struct Manifest {
    std::size_t grid_side = 0;
    std::size_t piece_px = 0;
    std::string config_digest;
    std::vector<ManifestEntry> entries;
};

void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

// Digest of the serialized manifest (lineage stamp for token datasets).
std::string manifest_digest(const Manifest& m);

// Materialize one puzzle from its manifest entry: generate or read the image,
// crop/resize to grid_side * piece_px, cut, shuffle, mark missing pieces.
// Deterministic; the missing-piece seed derives from the shuffle seed.
PuzzleInstance materialize_puzzle(const Manifest& m, const ManifestEntry& e,
                                  const std::string& base_dir = "");

// Re-invocable piece stream over every puzzle of a manifest, in entry order
// (used to fit codebooks without holding the corpus in memory).
PieceSource manifest_piece_source(const Manifest& m, const std::string& base_dir = "");

// Tokenize every manifest entry against a codebook.
TokenDataset tokenize_manifest(const Manifest& m, const Codebook& cb,
                               const std::string& base_dir = "");

}  // namespace puzzleseq
