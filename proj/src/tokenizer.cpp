#include "puzzleseq/tokenizer.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "puzzleseq/binio.hpp"
#include "puzzleseq/digest.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::vector<std::size_t> border_order(std::size_t t, bool clockwise, bool border_only) {
    std::vector<std::size_t> order;
    if (!border_only) {
        order.resize(t * t);
        for (std::size_t i = 0; i < t * t; ++i) order[i] = i;
        return order;
    }
    if (t == 1) return {0};
    if (!clockwise) {
        // raster scan over border cells
        for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t c = 0; c < t; ++c) {
                if (r == 0 || r == t - 1 || c == 0 || c == t - 1) order.push_back(r * t + c);
            }
        }
        return order;
    }
    // clockwise ring starting at the top-left cell
    for (std::size_t c = 0; c < t; ++c) order.push_back(c);                       // top
    for (std::size_t r = 1; r < t; ++r) order.push_back(r * t + (t - 1));         // right
    for (std::size_t c = t - 1; c-- > 0;) order.push_back((t - 1) * t + c);       // bottom
    for (std::size_t r = t - 2; r >= 1; --r) order.push_back(r * t);              // left
    return order;
}

Matrix extract_patches(const Piece& piece, std::size_t t) {
    if (t == 0) throw ConfigError("extract_patches: granularity must be >= 1");
    if (piece.side % t != 0) {
        throw DataError("extract_patches: piece side " + std::to_string(piece.side) +
                        " not divisible by granularity " + std::to_string(t));
    }
    const std::size_t ps = piece.side / t;  // patch side
    const std::size_t dim = ps * ps * piece.channels;
    Matrix out(t * t, dim);
    for (std::size_t pr = 0; pr < t; ++pr) {
        for (std::size_t pc = 0; pc < t; ++pc) {
            double* row = out.row(pr * t + pc);
            std::size_t w = 0;
            for (std::size_t y = 0; y < ps; ++y) {
                for (std::size_t x = 0; x < ps; ++x) {
                    for (std::size_t c = 0; c < piece.channels; ++c) {
                        row[w++] = piece.at(pr * ps + y, pc * ps + x, c);
                    }
                }
            }
        }
    }
    return out;
}

namespace {

// Deterministic reservoir sample of `cap` indices out of `total`, returned sorted.
std::vector<std::size_t> reservoir_indices(std::size_t total, std::size_t cap,
                                           std::uint64_t seed) {
    std::vector<std::size_t> keep(cap);
    for (std::size_t i = 0; i < cap; ++i) keep[i] = i;
    Rng rng(seed);
    for (std::size_t i = cap; i < total; ++i) {
        const std::size_t j = (std::size_t)rng.below(i + 1);
        if (j < cap) keep[j] = i;
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

struct FitGeometry {
    std::size_t piece_px = 0;
    std::size_t channels = 0;
    std::size_t patch_dim = 0;
    std::size_t n_pieces = 0;
};

FitGeometry scan_geometry(const PieceSource& pieces, std::size_t t) {
    FitGeometry g;
    pieces([&](const Piece& p) {
        if (g.n_pieces == 0) {
            g.piece_px = p.side;
            g.channels = p.channels;
            if (p.side % t != 0) {
                throw DataError("fit_codebook: piece side " + std::to_string(p.side) +
                                " not divisible by granularity " + std::to_string(t));
            }
            const std::size_t ps = p.side / t;
            g.patch_dim = ps * ps * p.channels;
        } else if (p.side != g.piece_px || p.channels != g.channels) {
            throw DataError("fit_codebook: inconsistent piece geometry");
        }
        ++g.n_pieces;
    });
    if (g.n_pieces == 0) throw DataError("fit_codebook: no training pieces");
    return g;
}

}  // namespace

Codebook fit_codebook(const PieceSource& pieces, const TokenizerConfig& cfg,
                      std::uint64_t seed) {
    if (cfg.vocab_size < 2) throw ConfigError("fit_codebook: vocab_size must be >= 2");
    const std::size_t t = cfg.granularity;
    const FitGeometry geom = scan_geometry(pieces, t);
    const std::size_t patches_per_piece = t * t;
    const std::size_t total = geom.n_pieces * patches_per_piece;

    const std::size_t km_dim = cfg.use_pca ? cfg.reduced_dim : geom.patch_dim;
    // spec'd subsample threshold, tightened when wide rows would blow memory
    const std::size_t cap =
        std::min<std::size_t>(2'000'000, (std::size_t(1) << 27) / std::max<std::size_t>(1, km_dim));
    if (cap < cfg.vocab_size) {
        throw ConfigError("fit_codebook: subsample cap " + std::to_string(cap) +
                          " below vocab_size " + std::to_string(cfg.vocab_size));
    }

    std::vector<std::size_t> selected;  // empty means "use everything"
    if (total > cap) selected = reservoir_indices(total, cap, mix_seed(seed, 1));
    const std::size_t n_rows = selected.empty() ? total : selected.size();
    if (n_rows < cfg.vocab_size) {
        throw DataError("fit_codebook: " + std::to_string(n_rows) + " patches < vocab_size " +
                        std::to_string(cfg.vocab_size));
    }

    // streams selected patch rows, buffered in blocks
    auto block_source = [&](const BlockVisitor& visit) {
        Matrix block(0, geom.patch_dim);
        block.data.reserve(4096 * geom.patch_dim);
        std::size_t row_index = 0;
        std::size_t sel_pos = 0;
        pieces([&](const Piece& p) {
            const Matrix patches = extract_patches(p, t);
            for (std::size_t r = 0; r < patches.rows; ++r, ++row_index) {
                if (!selected.empty()) {
                    if (sel_pos >= selected.size() || selected[sel_pos] != row_index) continue;
                    ++sel_pos;
                }
                block.data.insert(block.data.end(), patches.row(r),
                                  patches.row(r) + patches.cols);
                ++block.rows;
                if (block.rows == 4096) {
                    visit(block);
                    block.rows = 0;
                    block.data.clear();
                }
            }
        });
        if (block.rows > 0) visit(block);
    };

    Codebook cb;
    cb.config = cfg;
    cb.piece_px = geom.piece_px;
    cb.channels = geom.channels;
    cb.fit_seed = seed;

    if (cfg.use_pca) {
        if (cfg.reduced_dim > geom.patch_dim) {
            throw ConfigError("fit_codebook: reduced_dim " + std::to_string(cfg.reduced_dim) +
                              " exceeds patch dim " + std::to_string(geom.patch_dim));
        }
        cb.pca = pca_fit_stream(block_source, cfg.reduced_dim);
    }

    // materialize the (projected) k-means input
    Matrix km_input(0, km_dim);
    km_input.data.reserve(n_rows * km_dim);
    block_source([&](const Matrix& block) {
        const Matrix rows = cb.pca ? pca_transform(*cb.pca, block) : block;
        km_input.data.insert(km_input.data.end(), rows.data.begin(), rows.data.end());
        km_input.rows += rows.rows;
    });

    cb.km = kmeans_fit(km_input, cfg.vocab_size, mix_seed(seed, 2));
    return cb;
}

SuperToken tokenize_piece(const Codebook& cb, const Piece& piece) {
    if (piece.side != cb.piece_px || piece.channels != cb.channels) {
        throw DataError("tokenize_piece: piece geometry " + std::to_string(piece.side) + "x" +
                        std::to_string(piece.channels) + "ch does not match codebook (" +
                        std::to_string(cb.piece_px) + "x" + std::to_string(cb.channels) + "ch)");
    }
    const Matrix patches = extract_patches(piece, cb.config.granularity);
    const Matrix projected = cb.pca ? pca_transform(*cb.pca, patches) : patches;
    const std::vector<std::uint32_t> all_ids = kmeans_assign(cb.km, projected);

    const auto order =
        border_order(cb.config.granularity, cb.config.clockwise, cb.config.border_only);
    SuperToken st;
    st.ids.reserve(order.size());
    for (std::size_t cell : order) st.ids.push_back(all_ids[cell]);
    return st;
}

EncodedPuzzle encode_puzzle(const Codebook& cb, const PuzzleInstance& pz) {
    const std::size_t n = pz.pieces.size();
    EncodedPuzzle ep;
    ep.n_pieces = n;
    ep.super_len = cb.config.super_token_len();
    ep.has_separator = cb.config.use_separator;

    std::vector<std::vector<std::uint32_t>> spans(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (pz.pieces[i].present) {
            spans[i] = tokenize_piece(cb, pz.pieces[i]).ids;
        } else {
            spans[i].assign(ep.super_len, cb.mask_id());
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (cb.config.lex_order) {
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (spans[a] != spans[b]) return spans[a] < spans[b];
            return a < b;
        });
    }

    ep.encoder_ids.reserve(n * ep.super_len + (n > 0 ? n - 1 : 0));
    for (std::size_t j = 0; j < n; ++j) {
        if (j > 0 && ep.has_separator) ep.encoder_ids.push_back(cb.sep_id());
        const auto& span = spans[order[j]];
        ep.encoder_ids.insert(ep.encoder_ids.end(), span.begin(), span.end());
        ep.labels.push_back((std::uint32_t)pz.pieces[order[j]].source_position);
        ep.piece_order.push_back((std::uint32_t)order[j]);
        ep.missing.push_back(pz.pieces[order[j]].present ? 0 : 1);
    }
    return ep;
}

std::vector<std::uint32_t> solved_sequence(const EncodedPuzzle& ep, std::uint32_t sep_id) {
    const std::size_t n = ep.n_pieces;
    std::vector<std::size_t> span_at(n);  // grid position -> span index
    for (std::size_t i = 0; i < n; ++i) span_at[ep.labels[i]] = i;
    std::vector<std::uint32_t> seq;
    seq.reserve(n * ep.super_len + (n > 0 ? n - 1 : 0));
    for (std::size_t g = 0; g < n; ++g) {
        if (g > 0 && ep.has_separator) seq.push_back(sep_id);
        const std::size_t i = span_at[g];
        const std::size_t begin = i * ep.super_len + (ep.has_separator ? i : 0);
        for (std::size_t w = 0; w < ep.super_len; ++w) {
            seq.push_back(ep.encoder_ids[begin + w]);
        }
    }
    return seq;
}

namespace {

ordered_json tokenizer_config_json(const TokenizerConfig& c) {
    ordered_json j;
    j["granularity"] = c.granularity;
    j["reduced_dim"] = c.reduced_dim;
    j["vocab_size"] = c.vocab_size;
    j["use_pca"] = c.use_pca;
    j["border_only"] = c.border_only;
    j["clockwise"] = c.clockwise;
    j["lex_order"] = c.lex_order;
    j["use_separator"] = c.use_separator;
    return j;
}

TokenizerConfig tokenizer_config_from_json(const json& j) {
    TokenizerConfig c;
    c.granularity = j.at("granularity").get<std::size_t>();
    c.reduced_dim = j.at("reduced_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.use_pca = j.at("use_pca").get<bool>();
    c.border_only = j.at("border_only").get<bool>();
    c.clockwise = j.at("clockwise").get<bool>();
    c.lex_order = j.at("lex_order").get<bool>();
    c.use_separator = j.at("use_separator").get<bool>();
    return c;
}

std::vector<std::uint8_t> codebook_payload(const Codebook& cb) {
    std::vector<std::uint8_t> payload;
    if (cb.pca) {
        put_f64_array(payload, cb.pca->mean.data(), cb.pca->mean.size());
        put_f64_array(payload, cb.pca->components.data.data(), cb.pca->components.size());
        put_f64_array(payload, cb.pca->explained_variance.data(),
                      cb.pca->explained_variance.size());
    }
    put_f64_array(payload, cb.km.centroids.data.data(), cb.km.centroids.size());
    put_f64_array(payload, &cb.km.inertia, 1);
    return payload;
}

constexpr char kCodebookMagic[9] = "PZCB0001";

}  // namespace

std::string codebook_config_digest(const Codebook& cb) {
    ordered_json j;
    j["config"] = tokenizer_config_json(cb.config);
    j["piece_px"] = cb.piece_px;
    j["channels"] = cb.channels;
    j["fit_seed"] = cb.fit_seed;
    return digest_hex(j.dump());
}

std::string codebook_content_digest(const Codebook& cb) {
    const auto payload = codebook_payload(cb);
    return digest_hex(std::string((const char*)payload.data(), payload.size()));
}

void save_codebook(const std::string& path, const Codebook& cb) {
    ordered_json header;
    header["format"] = "pzcb";
    header["version"] = 1;
    header["endianness"] = "little";
    header["config"] = tokenizer_config_json(cb.config);
    header["piece_px"] = cb.piece_px;
    header["channels"] = cb.channels;
    header["fit_seed"] = cb.fit_seed;
    header["pca"] = ordered_json{{"present", cb.pca.has_value()},
                                 {"dim", cb.pca ? cb.pca->mean.size() : 0},
                                 {"reduced", cb.pca ? cb.pca->components.rows : 0}};
    header["kmeans"] = ordered_json{{"k", cb.km.centroids.rows},
                                    {"dim", cb.km.centroids.cols},
                                    {"iterations", cb.km.iterations_run}};
    header["special_ids"] = ordered_json{{"sep", cb.sep_id()},
                                         {"mask", cb.mask_id()},
                                         {"pad", cb.pad_id()},
                                         {"bos", cb.bos_id()}};
    header["config_digest"] = codebook_config_digest(cb);
    header["content_digest"] = codebook_content_digest(cb);
    write_container(path, kCodebookMagic, header.dump(), codebook_payload(cb));
}

Codebook load_codebook(const std::string& path) {
    const Container c = read_container(path, kCodebookMagic);
    json header;
    try {
        header = json::parse(c.header_json);
    } catch (const json::exception& e) {
        throw DataError("bad codebook header in " + path + ": " + e.what());
    }
    Codebook cb;
    cb.config = tokenizer_config_from_json(header.at("config"));
    cb.piece_px = header.at("piece_px").get<std::size_t>();
    cb.channels = header.at("channels").get<std::size_t>();
    cb.fit_seed = header.at("fit_seed").get<std::uint64_t>();

    std::size_t pos = 0;
    if (header.at("pca").at("present").get<bool>()) {
        const std::size_t dim = header.at("pca").at("dim").get<std::size_t>();
        const std::size_t red = header.at("pca").at("reduced").get<std::size_t>();
        PcaModel pca;
        pca.mean.resize(dim);
        get_f64_array(c.payload, pos, pca.mean.data(), dim);
        pca.components = Matrix(red, dim);
        get_f64_array(c.payload, pos, pca.components.data.data(), red * dim);
        pca.explained_variance.resize(red);
        get_f64_array(c.payload, pos, pca.explained_variance.data(), red);
        cb.pca = std::move(pca);
    }
    const std::size_t k = header.at("kmeans").at("k").get<std::size_t>();
    const std::size_t dim = header.at("kmeans").at("dim").get<std::size_t>();
    cb.km.centroids = Matrix(k, dim);
    get_f64_array(c.payload, pos, cb.km.centroids.data.data(), k * dim);
    get_f64_array(c.payload, pos, &cb.km.inertia, 1);
    cb.km.iterations_run = header.at("kmeans").at("iterations").get<std::size_t>();
    if (k != cb.config.vocab_size) throw DataError("codebook centroid count mismatch: " + path);
    return cb;
}

void save_token_dataset(const std::string& path, const TokenDataset& ds) {
    ordered_json header;
    header["format"] = "pztk";
    header["version"] = 1;
    header["config"] = tokenizer_config_json(ds.config);
    header["grid_side"] = ds.grid_side;
    header["n_pieces"] = ds.n_pieces;
    header["super_len"] = ds.super_len;
    header["piece_px"] = ds.piece_px;
    header["count"] = ds.records.size();
    header["codebook_digest"] = ds.codebook_digest;
    header["manifest_digest"] = ds.manifest_digest;

    std::vector<std::uint8_t> payload;
    for (const auto& rec : ds.records) {
        put_varint(payload, rec.id.size());
        payload.insert(payload.end(), rec.id.begin(), rec.id.end());
        put_varint(payload, rec.encoder_ids.size());
        for (std::uint32_t v : rec.encoder_ids) put_varint(payload, v);
        put_varint(payload, rec.labels.size());
        for (std::uint32_t v : rec.labels) put_varint(payload, v);
        payload.insert(payload.end(), rec.missing.begin(), rec.missing.end());
    }
    write_container(path, "PZTK0001", header.dump(), payload);
}

TokenDataset load_token_dataset(const std::string& path) {
    const Container c = read_container(path, "PZTK0001");
    json header;
    try {
        header = json::parse(c.header_json);
    } catch (const json::exception& e) {
        throw DataError("bad token dataset header in " + path + ": " + e.what());
    }
    TokenDataset ds;
    ds.config = tokenizer_config_from_json(header.at("config"));
    ds.grid_side = header.at("grid_side").get<std::size_t>();
    ds.n_pieces = header.at("n_pieces").get<std::size_t>();
    ds.super_len = header.at("super_len").get<std::size_t>();
    ds.piece_px = header.at("piece_px").get<std::size_t>();
    ds.codebook_digest = header.at("codebook_digest").get<std::string>();
    ds.manifest_digest = header.at("manifest_digest").get<std::string>();
    const std::size_t count = header.at("count").get<std::size_t>();

    std::size_t pos = 0;
    ds.records.resize(count);
    for (auto& rec : ds.records) {
        const std::size_t id_len = get_varint(c.payload, pos);
        if (pos + id_len > c.payload.size()) throw DataError("truncated record id: " + path);
        rec.id.assign((const char*)c.payload.data() + pos, id_len);
        pos += id_len;
        rec.encoder_ids.resize(get_varint(c.payload, pos));
        for (auto& v : rec.encoder_ids) v = (std::uint32_t)get_varint(c.payload, pos);
        rec.labels.resize(get_varint(c.payload, pos));
        for (auto& v : rec.labels) v = (std::uint32_t)get_varint(c.payload, pos);
        rec.missing.resize(rec.labels.size());
        if (pos + rec.missing.size() > c.payload.size()) {
            throw DataError("truncated missing flags: " + path);
        }
        std::copy(c.payload.begin() + (std::ptrdiff_t)pos,
                  c.payload.begin() + (std::ptrdiff_t)(pos + rec.missing.size()),
                  rec.missing.begin());
        pos += rec.missing.size();
    }
    return ds;
}

std::string record_debug_line(const TokenRecord& rec, std::uint32_t sep_id) {
    std::string line;
    for (std::size_t i = 0; i < rec.encoder_ids.size(); ++i) {
        if (i > 0) line += ' ';
        if (rec.encoder_ids[i] == sep_id) {
            line += '|';
        } else {
            line += std::to_string(rec.encoder_ids[i]);
        }
    }
    line += " ->";
    for (std::uint32_t v : rec.labels) {
        line += ' ';
        line += std::to_string(v);
    }
    return line;
}

void write_token_debug_text(const std::string& path, const TokenDataset& ds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "# token dataset debug dump: ids with '|' separators -> grid labels\n";
    for (const auto& rec : ds.records) {
        out << rec.id << ": " << record_debug_line(rec, ds.sep_id()) << "\n";
    }
}

}  // namespace puzzleseq
