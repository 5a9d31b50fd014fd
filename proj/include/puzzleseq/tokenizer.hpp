#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "puzzleseq/kmeans.hpp"
#include "puzzleseq/matrix.hpp"
#include "puzzleseq/pca.hpp"
#include "puzzleseq/puzzle.hpp"

namespace puzzleseq {

// Tokenization pipeline switches. Every flag defaults on; flipping one
// selects the corresponding ablation arm.
struct TokenizerConfig {
    std::size_t granularity = 4;   // T: patches per piece side
    std::size_t reduced_dim = 1024;  // d: PCA output dimension
    std::size_t vocab_size = 4096;   // k: number of k-means centroids
    bool use_pca = true;
    bool border_only = true;
    bool clockwise = true;
    bool lex_order = true;
    bool use_separator = true;

    // tokens per piece; the border ring has 4(T-1) cells, with T=1 degenerating
    // to the single whole-piece patch
    std::size_t super_token_len() const {
        if (!border_only) return granularity * granularity;
        return granularity > 1 ? 4 * (granularity - 1) : 1;
    }
};

// Fitted tokenizer state. Content token ids live in [0, k); the special ids
// follow directly after so the content vocabulary stays dense.
struct Codebook {
    TokenizerConfig config;
    std::optional<PcaModel> pca;  // absent when use_pca = false
    KMeansModel km;
    std::size_t piece_px = 0;
    std::size_t channels = 3;
    std::uint64_t fit_seed = 0;

    std::uint32_t sep_id() const { return (std::uint32_t)config.vocab_size; }
    std::uint32_t mask_id() const { return (std::uint32_t)config.vocab_size + 1; }
    std::uint32_t pad_id() const { return (std::uint32_t)config.vocab_size + 2; }
    std::uint32_t bos_id() const { return (std::uint32_t)config.vocab_size + 3; }
    std::size_t total_vocab() const { return config.vocab_size + 4; }
};

struct SuperToken {
    std::vector<std::uint32_t> ids;  // length super_token_len(), each < k
};

struct EncodedPuzzle {
    std::vector<std::uint32_t> encoder_ids;
    PermutationLabel labels;                // labels[i] = grid position of i-th span
    std::vector<std::uint32_t> piece_order; // shuffled index of each span's piece
    std::vector<std::uint8_t> missing;      // per span, 1 when the piece is missing
    std::size_t n_pieces = 0;
    std::size_t super_len = 0;
    bool has_separator = false;
};

// Patch-grid indices making up a super-token, in emission order.
std::vector<std::size_t> border_order(std::size_t granularity, bool clockwise,
                                      bool border_only);

// Split a piece into a T x T patch grid; row i is patch i (row-major over the
// grid), flattened pixel-major with channels interleaved last: D = (side/T)^2 * C.
Matrix extract_patches(const Piece& piece, std::size_t granularity);

// Re-invocable source of training pieces in a fixed order.
using PieceVisitor = std::function<void(const Piece&)>;
using PieceSource = std::function<void(const PieceVisitor&)>;

// Unsupervised fit: PCA projection (optional) followed by k-means over all
// training patches. Patch sets larger than the subsample cap are thinned by
// seeded reservoir sampling before fitting.
Codebook fit_codebook(const PieceSource& pieces, const TokenizerConfig& cfg,
                      std::uint64_t seed);

SuperToken tokenize_piece(const Codebook& cb, const Piece& piece);

// Tokenize every piece, mask missing ones, impose the configured piece order
// (lexicographic over super-token id arrays, shuffled-index tiebreak), and
// join spans with separator tokens.
EncodedPuzzle encode_puzzle(const Codebook& cb, const PuzzleInstance& pz);

// Solved-order token sequence (spans sorted by grid position), used as the
// generation target in element-wise mode.
std::vector<std::uint32_t> solved_sequence(const EncodedPuzzle& ep, std::uint32_t sep_id);

// ---- files ----

void save_codebook(const std::string& path, const Codebook& cb);
Codebook load_codebook(const std::string& path);

// Lineage digests: config_digest covers the fit configuration, content_digest
// the serialized numeric payload.
std::string codebook_config_digest(const Codebook& cb);
std::string codebook_content_digest(const Codebook& cb);

struct TokenRecord {
    std::string id;
    std::vector<std::uint32_t> encoder_ids;
    PermutationLabel labels;
    std::vector<std::uint8_t> missing;
};

struct TokenDataset {
    TokenizerConfig config;
    std::size_t grid_side = 0;
    std::size_t n_pieces = 0;
    std::size_t super_len = 0;
    std::size_t piece_px = 0;
    std::string codebook_digest;
    std::string manifest_digest;
    std::vector<TokenRecord> records;

    std::size_t vocab_size() const { return config.vocab_size; }
    std::uint32_t sep_id() const { return (std::uint32_t)config.vocab_size; }
    std::uint32_t mask_id() const { return (std::uint32_t)config.vocab_size + 1; }
    std::uint32_t pad_id() const { return (std::uint32_t)config.vocab_size + 2; }
    std::uint32_t bos_id() const { return (std::uint32_t)config.vocab_size + 3; }
    std::size_t total_vocab() const { return config.vocab_size + 4; }
};

void save_token_dataset(const std::string& path, const TokenDataset& ds);
TokenDataset load_token_dataset(const std::string& path);

// Plain-text debug form: encoder ids space separated with '|' in place of the
// separator id, then " -> " and the labels.
std::string record_debug_line(const TokenRecord& rec, std::uint32_t sep_id);
void write_token_debug_text(const std::string& path, const TokenDataset& ds);

}  // namespace puzzleseq
