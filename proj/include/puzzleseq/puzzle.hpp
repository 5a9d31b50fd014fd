#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "puzzleseq/image.hpp"

namespace puzzleseq {

// One square piece. Pixels use the same layout as Image, side x side x channels.
struct Piece {
    std::size_t side = 0;
    std::size_t channels = 3;
    std::vector<double> pixels;
    std::size_t source_position = 0;  // row-major grid index in the source image
    bool present = true;

    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * side + x) * channels + c];
    }
    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * side + x) * channels + c];
    }
};

struct PuzzleInstance {
    std::vector<Piece> pieces;  // shuffled order
    std::size_t grid_side = 0;
    std::uint64_t shuffle_seed = 0;
    std::size_t missing_count = 0;
};

// assignments[i] = grid position of the i-th piece in some fixed piece order
using PermutationLabel = std::vector<std::uint32_t>;

bool is_permutation(std::span<const std::uint32_t> labels);

// Cut a square image into grid_side^2 pieces in row-major source order.
// Rejects sides not divisible by grid_side, reporting the remainder.
std::vector<Piece> cut_image(const Image& img, std::size_t grid_side);

// Deterministic Fisher-Yates shuffle; source_position fields are untouched.
PuzzleInstance shuffle_pieces(std::vector<Piece> pieces, std::size_t grid_side,
                              std::uint64_t seed);

// Flag exactly m pieces as missing, chosen uniformly by seed. Pixel data of
// present pieces is never altered.
PuzzleInstance mark_missing(PuzzleInstance pz, std::size_t m, std::uint64_t seed);

// Place piece i at grid position placement[i]. Missing pieces render black.
Image reassemble(const PuzzleInstance& pz, const PermutationLabel& placement);

// Ground-truth placement (each piece at its source_position).
PermutationLabel true_placement(const PuzzleInstance& pz);

}  // namespace puzzleseq
