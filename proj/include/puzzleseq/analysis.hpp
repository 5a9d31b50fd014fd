#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "puzzleseq/tokenizer.hpp"

namespace puzzleseq {

// Empirical token frequencies over content ids only (separators, masks and
// other special ids are structural and excluded).
struct FrequencyTable {
    std::map<std::uint32_t, std::uint64_t> counts;
    std::uint64_t total = 0;

    void add(std::uint32_t id, std::uint64_t n = 1) {
        counts[id] += n;
        total += n;
    }
    void merge(const FrequencyTable& other) {
        for (const auto& [id, n] : other.counts) add(id, n);
    }
};

// -sum p ln p in nats; 0 ln 0 := 0. Throws on an empty table.
double shannon_entropy_nats(const FrequencyTable& ft);

inline double nats_to_bits(double nats) { return nats / 0.6931471805599453; }

// Content ids of one record (specials stripped).
std::vector<std::uint32_t> content_tokens(const TokenRecord& rec, std::uint32_t vocab_size);

struct EntropyByLengthRow {
    std::size_t n = 0;        // content tokens per puzzle
    std::size_t puzzles = 0;  // group size at this exact n
    double mean_h_nats = 0.0;
    double mean_h_bits = 0.0;
    double uniform_h_nats = 0.0;
    double uniform_h_bits = 0.0;
};

// Per-puzzle entropy averaged within groups of equal token count, paired with
// the uniform-sampling baseline at the same lengths.
std::vector<EntropyByLengthRow> per_puzzle_entropy(const TokenDataset& ds,
                                                   std::size_t baseline_trials,
                                                   std::uint64_t baseline_seed);

// Mean empirical entropy (nats) of `trials` sequences of n i.i.d. uniform
// tokens over k, for each requested n.
std::vector<std::pair<std::size_t, double>> uniform_baseline(
    const std::vector<std::size_t>& n_values, std::size_t k, std::size_t trials,
    std::uint64_t seed);

struct ZipfRow {
    std::size_t rank = 0;  // starting at 1
    std::uint32_t token = 0;
    std::uint64_t count = 0;
};

// Tokens by descending count, ties by ascending id.
std::vector<ZipfRow> zipf_curve(const FrequencyTable& ft);

struct HeapsRow {
    std::size_t n = 0;
    std::size_t unique_count = 0;
};

// Unique-token counts after the first n stream tokens, for each sample point.
std::vector<HeapsRow> heaps_curve(const std::vector<std::uint32_t>& stream,
                                  const std::vector<std::size_t>& sample_points);

// Least-squares slope of log(y) against log(x); used for the Zipf exponent
// (expected near -1) and the Heaps exponent (beta).
double loglog_slope(const std::vector<std::pair<double, double>>& xy);
double zipf_slope(const std::vector<ZipfRow>& rows);
double heaps_beta(const std::vector<HeapsRow>& rows);

struct AnalysisReport {
    std::vector<EntropyByLengthRow> entropy_by_length;
    std::vector<ZipfRow> zipf;
    std::vector<HeapsRow> heaps;
    double zipf_fitted_slope = 0.0;
    double heaps_fitted_beta = 0.0;
    std::uint64_t total_tokens = 0;
    std::size_t unique_tokens = 0;
};

AnalysisReport analyze_dataset(const TokenDataset& ds, std::size_t baseline_trials,
                               std::uint64_t baseline_seed);

// One CSV per curve plus a JSON sidecar with digests and fitted exponents.
void write_analysis_csv(const std::string& out_dir, const AnalysisReport& report,
                        const std::string& dataset_digest, const std::string& config_digest);

}  // namespace puzzleseq
