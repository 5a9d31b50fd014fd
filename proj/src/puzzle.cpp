#include "puzzleseq/puzzle.hpp"

#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

bool is_permutation(std::span<const std::uint32_t> labels) {
    std::vector<bool> seen(labels.size(), false);
    for (std::uint32_t v : labels) {
        if (v >= labels.size() || seen[v]) return false;
        seen[v] = true;
    }
    return true;
}

std::vector<Piece> cut_image(const Image& img, std::size_t grid_side) {
    if (grid_side == 0) throw ConfigError("cut_image: grid_side must be > 0");
    if (img.height != img.width) {
        throw DataError("cut_image: image must be square, got " + std::to_string(img.height) +
                        "x" + std::to_string(img.width));
    }
    if (img.height % grid_side != 0) {
        throw DataError("cut_image: side " + std::to_string(img.height) +
                        " not divisible by grid " + std::to_string(grid_side) +
                        " (remainder " + std::to_string(img.height % grid_side) + ")");
    }
    const std::size_t piece_side = img.height / grid_side;
    std::vector<Piece> pieces(grid_side * grid_side);
    for (std::size_t r = 0; r < grid_side; ++r) {
        for (std::size_t c = 0; c < grid_side; ++c) {
            Piece& p = pieces[r * grid_side + c];
            p.side = piece_side;
            p.channels = img.channels;
            p.source_position = r * grid_side + c;
            p.pixels.resize(piece_side * piece_side * img.channels);
            for (std::size_t y = 0; y < piece_side; ++y) {
                for (std::size_t x = 0; x < piece_side; ++x) {
                    for (std::size_t ch = 0; ch < img.channels; ++ch) {
                        p.at(y, x, ch) = img.at(r * piece_side + y, c * piece_side + x, ch);
                    }
                }
            }
        }
    }
    return pieces;
}

PuzzleInstance shuffle_pieces(std::vector<Piece> pieces, std::size_t grid_side,
                              std::uint64_t seed) {
    PuzzleInstance pz;
    pz.grid_side = grid_side;
    pz.shuffle_seed = seed;
    pz.pieces = std::move(pieces);
    Rng rng(seed);
    // Fisher-Yates, high index down
    for (std::size_t i = pz.pieces.size(); i > 1; --i) {
        const std::size_t j = (std::size_t)rng.below(i);
        std::swap(pz.pieces[i - 1], pz.pieces[j]);
    }
    return pz;
}

PuzzleInstance mark_missing(PuzzleInstance pz, std::size_t m, std::uint64_t seed) {
    const std::size_t n = pz.pieces.size();
    if (m >= n) {
        throw ConfigError("mark_missing: m=" + std::to_string(m) + " must be < N=" +
                          std::to_string(n));
    }
    for (auto& p : pz.pieces) p.present = true;
    // partial Fisher-Yates over indices picks m distinct pieces uniformly
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + (std::size_t)rng.below(n - i);
        std::swap(idx[i], idx[j]);
        pz.pieces[idx[i]].present = false;
    }
    pz.missing_count = m;
    return pz;
}

Image reassemble(const PuzzleInstance& pz, const PermutationLabel& placement) {
    if (placement.size() != pz.pieces.size()) {
        throw ConfigError("reassemble: placement length mismatch");
    }
    const std::size_t g = pz.grid_side;
    const std::size_t side = pz.pieces.empty() ? 0 : pz.pieces[0].side;
    Image img(g * side, g * side, pz.pieces.empty() ? 3 : pz.pieces[0].channels);
    for (std::size_t i = 0; i < pz.pieces.size(); ++i) {
        const Piece& p = pz.pieces[i];
        if (!p.present) continue;
        const std::size_t r = placement[i] / g;
        const std::size_t c = placement[i] % g;
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                for (std::size_t ch = 0; ch < img.channels; ++ch) {
                    img.at(r * side + y, c * side + x, ch) = p.at(y, x, ch);
                }
            }
        }
    }
    return img;
}

PermutationLabel true_placement(const PuzzleInstance& pz) {
    PermutationLabel labels(pz.pieces.size());
    for (std::size_t i = 0; i < pz.pieces.size(); ++i) {
        labels[i] = (std::uint32_t)pz.pieces[i].source_position;
    }
    return labels;
}

}  // namespace puzzleseq
