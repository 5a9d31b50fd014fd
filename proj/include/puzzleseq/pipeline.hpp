#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puzzleseq/dataset.hpp"
#include "puzzleseq/solver.hpp"
#include "puzzleseq/tokenizer.hpp"
#include "puzzleseq/trainer.hpp"

namespace puzzleseq {

// One document governing a full experiment. Every stochastic step carries an
// explicit seed; the config digest is stamped into every artifact.
struct RunConfig {
    std::string out_dir = "run";

    struct Corpus {
        std::string kind = "synth";  // "synth" | "files"
        std::size_t train_count = 2000;
        std::size_t test_count = 200;
        std::uint64_t seed = 1;
        std::string image_dir;  // for kind = "files"
    } corpus;

    std::size_t grid_side = 3;
    std::size_t piece_px = 32;
    std::vector<std::size_t> missing_train{0};  // cycled over puzzles
    std::vector<std::size_t> missing_test{0};
    std::uint64_t shuffle_seed_base = 1000;

    TokenizerConfig tokenizer;
    std::uint64_t tokenizer_fit_seed = 11;

    TrainConfig trainer;

    std::size_t analysis_baseline_trials = 200;
    std::uint64_t analysis_baseline_seed = 77;

    int threads = 0;  // 0 = library default
};

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_digest(const RunConfig& rc);

// Paths of the artifacts a run produces under out_dir.
struct RunPaths {
    std::string out_dir;
    std::string train_manifest, test_manifest;
    std::string codebook;
    std::string train_tokens, test_tokens;
    std::string checkpoint, train_log;
    std::string eval_json, eval_csv;
    std::string analysis_dir;
};
RunPaths run_paths(const RunConfig& rc);

// Stages. Each consumes prior artifacts by path, validates lineage digests
// and writes its own artifact.
void stage_make_dataset(const RunConfig& rc);
Codebook stage_fit_tokenizer(const RunConfig& rc);
void stage_tokenize(const RunConfig& rc, bool debug_text = false);
TrainOutcome stage_train(const RunConfig& rc);

struct EvalStageOptions {
    std::string mode;  // empty = checkpoint's training mode
    std::size_t beam_width = 1;
    bool force = false;
    std::string split = "test";  // "test" | "train"
};
EvalSummary stage_eval(const RunConfig& rc, const EvalStageOptions& opts = {});

void stage_analyze(const RunConfig& rc, const std::string& split = "train");

// Whole-pipeline convenience used by tests and `run-all`.
void run_all_stages(const RunConfig& rc);

// Refuses element-wise decoding above this granularity unless forced: the
// generated sequence grows as N*4(T-1) and becomes impractical.
constexpr std::size_t kElementWiseMaxGranularity = 2;
void check_element_wise_practical(std::size_t granularity, bool force);

}  // namespace puzzleseq
