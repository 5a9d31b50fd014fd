#include "puzzleseq/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "puzzleseq/errors.hpp"

namespace puzzleseq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Batch single_batch(std::span<const std::uint32_t> encoder_ids,
                   const std::vector<std::uint32_t>& tgt_in) {
    Batch b;
    b.batch = 1;
    b.src_len = encoder_ids.size();
    b.tgt_len = tgt_in.size();
    b.src.assign(encoder_ids.begin(), encoder_ids.end());
    b.tgt_in = tgt_in;
    b.tgt_out.assign(tgt_in.size(), 0);  // unused by forward
    return b;
}

// masked log-softmax value of `pick` among allowed entries of the last row
double masked_logprob(const double* row, std::size_t vocab,
                      const std::vector<std::uint8_t>& allowed, std::uint32_t pick) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < vocab; ++j) {
        if (allowed[j] && row[j] > mx) mx = row[j];
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
        if (allowed[j]) sum += std::exp(row[j] - mx);
    }
    return row[pick] - mx - std::log(sum);
}

}  // namespace

SolveResult decode_index_wise(const ModelParams& params, const ModelConfig& cfg,
                              std::span<const std::uint32_t> encoder_ids, std::size_t n) {
    return decode_index_wise_beam(params, cfg, encoder_ids, n, 1);
}

SolveResult decode_index_wise_beam(const ModelParams& params, const ModelConfig& cfg,
                                   std::span<const std::uint32_t> encoder_ids,
                                   std::size_t n, std::size_t beam_width) {
    if (n == 0) throw ConfigError("decode: empty puzzle");
    if (n + 2 > cfg.vocab_out) {
        throw ConfigError("decode: N=" + std::to_string(n) +
                          " exceeds position vocabulary of the model");
    }
    if (beam_width == 0) beam_width = 1;

    struct Hyp {
        std::vector<std::uint32_t> seq;
        std::vector<std::uint8_t> used;
        std::vector<double> step_logprobs;
        double score = 0.0;
    };
    Hyp start;
    start.used.assign(n, 0);
    std::vector<Hyp> beam{std::move(start)};

    for (std::size_t step = 0; step < n; ++step) {
        struct Cand {
            std::size_t hyp;
            std::uint32_t pos;
            double logprob;  // of this step, from the masked renormalized distribution
            double score;
        };
        std::vector<Cand> cands;
        for (std::size_t hi = 0; hi < beam.size(); ++hi) {
            const Hyp& h = beam[hi];
            std::vector<std::uint32_t> tgt_in;
            tgt_in.reserve(step + 1);
            tgt_in.push_back(cfg.bos_out);
            tgt_in.insert(tgt_in.end(), h.seq.begin(), h.seq.end());
            const Batch b = single_batch(encoder_ids, tgt_in);
            const Matrix logits = forward(params, cfg, b);
            const double* row = logits.row(logits.rows - 1);

            std::vector<std::uint8_t> allowed(cfg.vocab_out, 0);
            for (std::size_t p = 0; p < n; ++p) allowed[p] = h.used[p] ? 0 : 1;
            for (std::uint32_t p = 0; p < n; ++p) {
                if (!allowed[p]) continue;
                cands.push_back({hi, p, masked_logprob(row, cfg.vocab_out, allowed, p),
                                 0.0});
                cands.back().score = h.score + cands.back().logprob;
            }
        }
        // deterministic: score desc, then hyp index, then position
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.hyp != b.hyp) return a.hyp < b.hyp;
            return a.pos < b.pos;
        });
        const std::size_t keep = std::min(beam_width, cands.size());
        std::vector<Hyp> next;
        next.reserve(keep);
        for (std::size_t c = 0; c < keep; ++c) {
            Hyp h = beam[cands[c].hyp];
            h.seq.push_back(cands[c].pos);
            h.used[cands[c].pos] = 1;
            h.step_logprobs.push_back(cands[c].logprob);
            h.score = cands[c].score;
            next.push_back(std::move(h));
        }
        beam = std::move(next);
    }

    SolveResult result;
    result.mode = DecodeMode::index_wise;
    result.predicted = beam.front().seq;
    result.per_step_logprobs = beam.front().step_logprobs;
    return result;
}

SolveResult decode_element_wise(const ModelParams& params, const ModelConfig& cfg,
                                const TokenRecord& rec, std::size_t super_len,
                                bool has_separator, std::uint32_t sep_id) {
    const std::size_t n = rec.labels.size();
    const std::size_t total = n * super_len + (has_separator ? n - 1 : 0);
    if (total > cfg.max_tgt_len) {
        throw ConfigError("decode_element_wise: sequence length " + std::to_string(total) +
                          " exceeds max_tgt_len");
    }

    // greedy generation of the solved sequence
    std::vector<std::uint32_t> generated;
    generated.reserve(total);
    std::vector<std::uint32_t> tgt_in{cfg.bos_out};
    for (std::size_t step = 0; step < total; ++step) {
        const Batch b = single_batch(rec.encoder_ids, tgt_in);
        const Matrix logits = forward(params, cfg, b);
        const double* row = logits.row(logits.rows - 1);
        std::uint32_t best = 0;
        double best_v = kNegInf;
        for (std::size_t j = 0; j < cfg.vocab_out; ++j) {
            if (row[j] > best_v) {
                best_v = row[j];
                best = (std::uint32_t)j;
            }
        }
        generated.push_back(best);
        tgt_in.push_back(best);
    }
    return match_generated_sequence(generated, rec, super_len, has_separator, sep_id);
}

SolveResult match_generated_sequence(const std::vector<std::uint32_t>& generated,
                                     const TokenRecord& rec, std::size_t super_len,
                                     bool has_separator, std::uint32_t sep_id) {
    const std::size_t n = rec.labels.size();
    // re-segment into N spans by expected layout; flag misplaced separators
    SolveResult result;
    result.mode = DecodeMode::element_wise;
    std::vector<std::vector<std::uint32_t>> gen_spans(n);
    std::size_t pos = 0;
    for (std::size_t g = 0; g < n; ++g) {
        if (g > 0 && has_separator) {
            if (generated[pos] != sep_id) result.structure_violation = true;
            ++pos;
        }
        gen_spans[g].assign(generated.begin() + (std::ptrdiff_t)pos,
                            generated.begin() + (std::ptrdiff_t)(pos + super_len));
        pos += super_len;
    }

    // input spans in encoder order
    std::vector<std::vector<std::uint32_t>> in_spans(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t begin = i * super_len + (has_separator ? i : 0);
        in_spans[i].assign(rec.encoder_ids.begin() + (std::ptrdiff_t)begin,
                           rec.encoder_ids.begin() + (std::ptrdiff_t)(begin + super_len));
    }

    // best-first matching: bind the closest (slot, span) pairs before anything
    // ambiguous, so an exact match can never be stolen by an earlier corrupted
    // slot; ties go to the earlier slot, then the lowest span index
    struct Pair {
        std::size_t dist, slot, span;
    };
    std::vector<Pair> pairs;
    pairs.reserve(n * n);
    for (std::size_t g = 0; g < n; ++g) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t dist = 0;
            for (std::size_t w = 0; w < super_len; ++w) {
                if (in_spans[i][w] != gen_spans[g][w]) ++dist;
            }
            pairs.push_back({dist, g, i});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.slot != b.slot) return a.slot < b.slot;
        return a.span < b.span;
    });
    result.predicted.assign(n, 0);
    result.per_step_logprobs.assign(n, 0.0);
    std::vector<std::uint8_t> slot_done(n, 0), span_done(n, 0);
    for (const Pair& p : pairs) {
        if (slot_done[p.slot] || span_done[p.span]) continue;
        slot_done[p.slot] = 1;
        span_done[p.span] = 1;
        result.predicted[p.span] = (std::uint32_t)p.slot;
    }
    return result;
}

double absolute_accuracy(std::span<const std::uint32_t> y,
                         std::span<const std::uint32_t> yhat) {
    if (y.size() != yhat.size() || y.empty()) {
        throw ConfigError("absolute_accuracy: length mismatch");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == yhat[i]) ++hits;
    }
    return double(hits) / double(y.size());
}

int perfect_accuracy(std::span<const std::uint32_t> y,
                     std::span<const std::uint32_t> yhat) {
    if (y.size() != yhat.size() || y.empty()) {
        throw ConfigError("perfect_accuracy: length mismatch");
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != yhat[i]) return 0;
    }
    return 1;
}

EvalSummary evaluate(const ModelParams& params, const ModelConfig& cfg,
                     const TokenDataset& ds, const EvalOptions& opts) {
    if (ds.records.empty()) throw DataError("evaluate: empty dataset");
    const std::size_t count = ds.records.size();
    std::vector<PuzzleScore> scores(count);

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t idx = 0; idx < (std::int64_t)count; ++idx) {
        const TokenRecord& rec = ds.records[(std::size_t)idx];
        const std::size_t n = rec.labels.size();
        SolveResult sr;
        if (opts.mode == DecodeMode::index_wise) {
            sr = decode_index_wise_beam(params, cfg, rec.encoder_ids, n, opts.beam_width);
        } else {
            sr = decode_element_wise(params, cfg, rec, ds.super_len,
                                     ds.config.use_separator, ds.sep_id());
        }
        PuzzleScore& sc = scores[(std::size_t)idx];
        sc.id = rec.id;
        sc.n = n;
        sc.structure_violation = sr.structure_violation;
        sc.absolute = absolute_accuracy(rec.labels, sr.predicted);
        sc.perfect = perfect_accuracy(rec.labels, sr.predicted);
        double lp = 0.0;
        for (double v : sr.per_step_logprobs) lp += v;
        sc.mean_logprob =
            sr.per_step_logprobs.empty() ? 0.0 : lp / double(sr.per_step_logprobs.size());

        // present-only variant: ignore spans flagged missing
        std::size_t present_hits = 0, present_n = 0, missing = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i < rec.missing.size() && rec.missing[i]) {
                ++missing;
                continue;
            }
            ++present_n;
            if (rec.labels[i] == sr.predicted[i]) ++present_hits;
        }
        sc.missing = missing;
        sc.absolute_present = present_n ? double(present_hits) / double(present_n) : 1.0;
        sc.perfect_present = present_hits == present_n ? 1 : 0;
    }

    EvalSummary summary;
    summary.n_puzzles = count;
    for (const auto& sc : scores) {
        summary.absolute += sc.absolute;
        summary.perfect += sc.perfect;
        summary.absolute_present += sc.absolute_present;
        summary.perfect_present += sc.perfect_present;
    }
    summary.absolute /= double(count);
    summary.perfect /= double(count);
    summary.absolute_present /= double(count);
    summary.perfect_present /= double(count);
    summary.per_puzzle = std::move(scores);
    return summary;
}

}  // namespace puzzleseq
