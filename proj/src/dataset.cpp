#include "puzzleseq/dataset.hpp"

#include <fstream>

#include "json.hpp"
#include "puzzleseq/digest.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kMissingSeedTag = 0x4D495353;  // derives missing picks from shuffle

ordered_json manifest_json(const Manifest& m) {
    ordered_json doc;
    doc["format"] = "puzzleseq-manifest";
    doc["version"] = 1;
    doc["grid_side"] = m.grid_side;
    doc["piece_px"] = m.piece_px;
    doc["config_digest"] = m.config_digest;
    ordered_json puzzles = ordered_json::array();
    for (const auto& e : m.entries) {
        ordered_json entry;
        entry["id"] = e.id;
        entry["source"] = e.source;
        entry["grid_side"] = e.grid_side;
        entry["missing_count"] = e.missing_count;
        entry["shuffle_seed"] = e.shuffle_seed;
        puzzles.push_back(std::move(entry));
    }
    doc["puzzles"] = std::move(puzzles);
    return doc;
}

}  // namespace

void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << manifest_json(m).dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
    Manifest m;
    m.grid_side = doc.at("grid_side").get<std::size_t>();
    m.piece_px = doc.at("piece_px").get<std::size_t>();
    m.config_digest = doc.at("config_digest").get<std::string>();
    for (const auto& entry : doc.at("puzzles")) {
        ManifestEntry e;
        e.id = entry.at("id").get<std::string>();
        e.source = entry.at("source").get<std::string>();
        e.grid_side = entry.at("grid_side").get<std::size_t>();
        e.missing_count = entry.at("missing_count").get<std::size_t>();
        e.shuffle_seed = entry.at("shuffle_seed").get<std::uint64_t>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::string manifest_digest(const Manifest& m) {
    return digest_hex(manifest_json(m).dump());
}

PuzzleInstance materialize_puzzle(const Manifest& m, const ManifestEntry& e,
                                  const std::string& base_dir) {
    const std::size_t side = e.grid_side * m.piece_px;
    Image img;
    if (e.source.starts_with("synth:")) {
        const std::uint64_t seed = std::stoull(e.source.substr(6));
        img = synth_image(seed, side);
    } else if (e.source.starts_with("file:")) {
        std::string path = e.source.substr(5);
        if (!base_dir.empty() && !path.starts_with("/")) path = base_dir + "/" + path;
        img = read_image(path);
        img = center_crop_square(img, e.grid_side);
        if (img.height != side) img = resize(img, side, side);
    } else {
        throw DataError("manifest entry " + e.id + ": unknown source '" + e.source + "'");
    }
    PuzzleInstance pz = shuffle_pieces(cut_image(img, e.grid_side), e.grid_side,
                                       e.shuffle_seed);
    if (e.missing_count > 0) {
        pz = mark_missing(std::move(pz), e.missing_count,
                          mix_seed(e.shuffle_seed, kMissingSeedTag));
    }
    return pz;
}

PieceSource manifest_piece_source(const Manifest& m, const std::string& base_dir) {
    return [&m, base_dir](const PieceVisitor& visit) {
        for (const auto& e : m.entries) {
            const PuzzleInstance pz = materialize_puzzle(m, e, base_dir);
            for (const auto& p : pz.pieces) visit(p);
        }
    };
}

TokenDataset tokenize_manifest(const Manifest& m, const Codebook& cb,
                               const std::string& base_dir) {
    TokenDataset ds;
    ds.config = cb.config;
    ds.grid_side = m.grid_side;
    ds.n_pieces = m.grid_side * m.grid_side;
    ds.super_len = cb.config.super_token_len();
    ds.piece_px = m.piece_px;
    ds.codebook_digest = codebook_content_digest(cb);
    ds.manifest_digest = manifest_digest(m);
    ds.records.resize(m.entries.size());

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < (std::int64_t)m.entries.size(); ++i) {
        const auto& e = m.entries[(std::size_t)i];
        const PuzzleInstance pz = materialize_puzzle(m, e, base_dir);
        const EncodedPuzzle ep = encode_puzzle(cb, pz);
        TokenRecord& rec = ds.records[(std::size_t)i];
        rec.id = e.id;
        rec.encoder_ids = ep.encoder_ids;
        rec.labels = ep.labels;
        rec.missing = ep.missing;
    }
    return ds;
}

}  // namespace puzzleseq
