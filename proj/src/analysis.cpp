#include "puzzleseq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

using ordered_json = nlohmann::ordered_json;

double shannon_entropy_nats(const FrequencyTable& ft) {
    if (ft.total == 0) throw DataError("shannon_entropy: empty frequency table");
    double h = 0.0;
    for (const auto& [id, n] : ft.counts) {
        if (n == 0) continue;
        const double p = double(n) / double(ft.total);
        h -= p * std::log(p);
    }
    return h;
}

std::vector<std::uint32_t> content_tokens(const TokenRecord& rec,
                                          std::uint32_t vocab_size) {
    std::vector<std::uint32_t> out;
    out.reserve(rec.encoder_ids.size());
    for (std::uint32_t v : rec.encoder_ids) {
        if (v < vocab_size) out.push_back(v);
    }
    return out;
}

std::vector<std::pair<std::size_t, double>> uniform_baseline(
    const std::vector<std::size_t>& n_values, std::size_t k, std::size_t trials,
    std::uint64_t seed) {
    if (trials == 0) throw ConfigError("uniform_baseline: trials must be >= 1");
    if (k == 0) throw ConfigError("uniform_baseline: k must be >= 1");
    std::vector<std::pair<std::size_t, double>> rows;
    rows.reserve(n_values.size());
    for (std::size_t vi = 0; vi < n_values.size(); ++vi) {
        const std::size_t n = n_values[vi];
        double sum = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            Rng rng(mix_seed(seed, vi * 1000003 + t));
            FrequencyTable ft;
            for (std::size_t i = 0; i < n; ++i) ft.add((std::uint32_t)rng.below(k));
            sum += shannon_entropy_nats(ft);
        }
        rows.emplace_back(n, sum / double(trials));
    }
    return rows;
}

std::vector<EntropyByLengthRow> per_puzzle_entropy(const TokenDataset& ds,
                                                   std::size_t baseline_trials,
                                                   std::uint64_t baseline_seed) {
    // group per-puzzle entropies by exact content-token count
    std::map<std::size_t, std::pair<std::size_t, double>> groups;  // n -> (count, sum H)
    for (const auto& rec : ds.records) {
        const auto toks = content_tokens(rec, (std::uint32_t)ds.vocab_size());
        if (toks.empty()) continue;
        FrequencyTable ft;
        for (std::uint32_t v : toks) ft.add(v);
        auto& g = groups[toks.size()];
        g.first += 1;
        g.second += shannon_entropy_nats(ft);
    }

    std::vector<std::size_t> n_values;
    n_values.reserve(groups.size());
    for (const auto& [n, g] : groups) n_values.push_back(n);
    const auto baseline =
        uniform_baseline(n_values, ds.vocab_size(), baseline_trials, baseline_seed);

    std::vector<EntropyByLengthRow> rows;
    rows.reserve(groups.size());
    std::size_t i = 0;
    for (const auto& [n, g] : groups) {
        EntropyByLengthRow row;
        row.n = n;
        row.puzzles = g.first;
        row.mean_h_nats = g.second / double(g.first);
        row.mean_h_bits = nats_to_bits(row.mean_h_nats);
        row.uniform_h_nats = baseline[i].second;
        row.uniform_h_bits = nats_to_bits(row.uniform_h_nats);
        ++i;
        rows.push_back(row);
    }
    return rows;
}

std::vector<ZipfRow> zipf_curve(const FrequencyTable& ft) {
    if (ft.total == 0) throw DataError("zipf_curve: empty frequency table");
    std::vector<ZipfRow> rows;
    rows.reserve(ft.counts.size());
    for (const auto& [id, n] : ft.counts) rows.push_back({0, id, n});
    std::sort(rows.begin(), rows.end(), [](const ZipfRow& a, const ZipfRow& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.token < b.token;
    });
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = i + 1;
    return rows;
}

std::vector<HeapsRow> heaps_curve(const std::vector<std::uint32_t>& stream,
                                  const std::vector<std::size_t>& sample_points) {
    std::vector<HeapsRow> rows;
    rows.reserve(sample_points.size());
    std::unordered_set<std::uint32_t> seen;
    std::size_t pos = 0;
    for (std::size_t n : sample_points) {
        if (n > stream.size()) {
            throw DataError("heaps_curve: sample point " + std::to_string(n) +
                            " exceeds stream length " + std::to_string(stream.size()));
        }
        for (; pos < n; ++pos) seen.insert(stream[pos]);
        rows.push_back({n, seen.size()});
    }
    return rows;
}

double loglog_slope(const std::vector<std::pair<double, double>>& xy) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t m = 0;
    for (const auto& [x, y] : xy) {
        if (x <= 0.0 || y <= 0.0) continue;
        const double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++m;
    }
    if (m < 2) throw DataError("loglog_slope: need at least 2 positive points");
    const double denom = double(m) * sxx - sx * sx;
    if (denom == 0.0) throw NumericError("loglog_slope: degenerate x values");
    return (double(m) * sxy - sx * sy) / denom;
}

double zipf_slope(const std::vector<ZipfRow>& rows) {
    std::vector<std::pair<double, double>> xy;
    xy.reserve(rows.size());
    for (const auto& r : rows) xy.emplace_back(double(r.rank), double(r.count));
    return loglog_slope(xy);
}

double heaps_beta(const std::vector<HeapsRow>& rows) {
    std::vector<std::pair<double, double>> xy;
    xy.reserve(rows.size());
    for (const auto& r : rows) xy.emplace_back(double(r.n), double(r.unique_count));
    return loglog_slope(xy);
}

AnalysisReport analyze_dataset(const TokenDataset& ds, std::size_t baseline_trials,
                               std::uint64_t baseline_seed) {
    if (ds.records.empty()) throw DataError("analyze: empty token dataset");
    AnalysisReport report;
    report.entropy_by_length = per_puzzle_entropy(ds, baseline_trials, baseline_seed);

    FrequencyTable ft;
    std::vector<std::uint32_t> stream;  // concatenated in record order
    for (const auto& rec : ds.records) {
        for (std::uint32_t v : content_tokens(rec, (std::uint32_t)ds.vocab_size())) {
            ft.add(v);
            stream.push_back(v);
        }
    }
    if (ft.total == 0) throw DataError("analyze: dataset has no content tokens");
    report.zipf = zipf_curve(ft);
    report.total_tokens = ft.total;
    report.unique_tokens = ft.counts.size();
    report.zipf_fitted_slope = zipf_slope(report.zipf);

    // log-spaced sample points over the stream
    std::vector<std::size_t> points;
    const std::size_t len = stream.size();
    for (double v = 1.0; v < double(len); v *= 1.25) {
        const auto p = (std::size_t)v;
        if (points.empty() || p > points.back()) points.push_back(p);
    }
    if (points.empty() || points.back() != len) points.push_back(len);
    report.heaps = heaps_curve(stream, points);
    report.heaps_fitted_beta = heaps_beta(report.heaps);
    return report;
}

void write_analysis_csv(const std::string& out_dir, const AnalysisReport& report,
                        const std::string& dataset_digest,
                        const std::string& config_digest) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/entropy_by_length.csv");
        if (!f) throw DataError("cannot write entropy csv in " + out_dir);
        f << "n,puzzles,mean_entropy_nats,mean_entropy_bits,uniform_entropy_nats,"
             "uniform_entropy_bits\n";
        for (const auto& r : report.entropy_by_length) {
            f << r.n << ',' << r.puzzles << ',' << r.mean_h_nats << ',' << r.mean_h_bits
              << ',' << r.uniform_h_nats << ',' << r.uniform_h_bits << '\n';
        }
    }
    {
        std::ofstream f(out_dir + "/zipf.csv");
        if (!f) throw DataError("cannot write zipf csv in " + out_dir);
        f << "rank,token,count\n";
        for (const auto& r : report.zipf) {
            f << r.rank << ',' << r.token << ',' << r.count << '\n';
        }
    }
    {
        std::ofstream f(out_dir + "/heaps.csv");
        if (!f) throw DataError("cannot write heaps csv in " + out_dir);
        f << "n,unique_tokens\n";
        for (const auto& r : report.heaps) f << r.n << ',' << r.unique_count << '\n';
    }
    ordered_json sidecar;
    sidecar["dataset_digest"] = dataset_digest;
    sidecar["config_digest"] = config_digest;
    sidecar["total_tokens"] = report.total_tokens;
    sidecar["unique_tokens"] = report.unique_tokens;
    sidecar["zipf_fitted_slope"] = report.zipf_fitted_slope;
    sidecar["heaps_fitted_beta"] = report.heaps_fitted_beta;
    sidecar["entropy_units"] = ordered_json::array({"nats", "bits"});
    std::ofstream f(out_dir + "/analysis.json");
    if (!f) throw DataError("cannot write analysis sidecar in " + out_dir);
    f << sidecar.dump(2) << "\n";
}

}  // namespace puzzleseq
