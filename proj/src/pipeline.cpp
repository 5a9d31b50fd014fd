#include "puzzleseq/pipeline.hpp"

#include <omp.h>

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "puzzleseq/analysis.hpp"
#include "puzzleseq/digest.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string resolve_out_dir(const std::string& out_dir) {
    if (!out_dir.empty() && out_dir.front() == '/') return out_dir;
    const char* root = std::getenv("PUZZLESEQ_OUT");
    if (root && *root) return std::string(root) + "/" + out_dir;
    return out_dir;
}

ordered_json run_config_json(const RunConfig& rc) {
    ordered_json j;
    j["out_dir"] = rc.out_dir;
    j["corpus"] = ordered_json{{"kind", rc.corpus.kind},
                               {"train_count", rc.corpus.train_count},
                               {"test_count", rc.corpus.test_count},
                               {"seed", rc.corpus.seed},
                               {"image_dir", rc.corpus.image_dir}};
    j["grid_side"] = rc.grid_side;
    j["piece_px"] = rc.piece_px;
    j["missing_train"] = rc.missing_train;
    j["missing_test"] = rc.missing_test;
    j["shuffle_seed_base"] = rc.shuffle_seed_base;
    j["tokenizer"] = ordered_json{{"granularity", rc.tokenizer.granularity},
                                  {"reduced_dim", rc.tokenizer.reduced_dim},
                                  {"vocab_size", rc.tokenizer.vocab_size},
                                  {"use_pca", rc.tokenizer.use_pca},
                                  {"border_only", rc.tokenizer.border_only},
                                  {"clockwise", rc.tokenizer.clockwise},
                                  {"lex_order", rc.tokenizer.lex_order},
                                  {"use_separator", rc.tokenizer.use_separator},
                                  {"fit_seed", rc.tokenizer_fit_seed}};
    j["model"] = ordered_json{{"mode", rc.trainer.mode},
                              {"d_model", rc.trainer.d_model},
                              {"n_heads", rc.trainer.n_heads},
                              {"n_enc_layers", rc.trainer.n_enc_layers},
                              {"n_dec_layers", rc.trainer.n_dec_layers},
                              {"d_ff", rc.trainer.d_ff},
                              {"dropout", rc.trainer.dropout},
                              {"init_seed", rc.trainer.init_seed}};
    j["trainer"] = ordered_json{{"steps", rc.trainer.steps},
                                {"batch_size", rc.trainer.batch_size},
                                {"lr", rc.trainer.hyper.lr},
                                {"warmup_steps", rc.trainer.hyper.warmup_steps},
                                {"min_lr_frac", rc.trainer.hyper.min_lr_frac},
                                {"clip_norm", rc.trainer.hyper.clip_norm},
                                {"train_seed", rc.trainer.train_seed},
                                {"log_every", rc.trainer.log_every}};
    j["analysis"] = ordered_json{{"baseline_trials", rc.analysis_baseline_trials},
                                 {"baseline_seed", rc.analysis_baseline_seed}};
    j["threads"] = rc.threads;
    return j;
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed run config: ") + e.what());
    }
    RunConfig rc;
    maybe(j, "out_dir", rc.out_dir);
    if (j.contains("corpus")) {
        const auto& c = j.at("corpus");
        maybe(c, "kind", rc.corpus.kind);
        maybe(c, "train_count", rc.corpus.train_count);
        maybe(c, "test_count", rc.corpus.test_count);
        maybe(c, "seed", rc.corpus.seed);
        maybe(c, "image_dir", rc.corpus.image_dir);
    }
    maybe(j, "grid_side", rc.grid_side);
    maybe(j, "piece_px", rc.piece_px);
    maybe(j, "missing_train", rc.missing_train);
    maybe(j, "missing_test", rc.missing_test);
    maybe(j, "shuffle_seed_base", rc.shuffle_seed_base);
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        maybe(t, "granularity", rc.tokenizer.granularity);
        maybe(t, "reduced_dim", rc.tokenizer.reduced_dim);
        maybe(t, "vocab_size", rc.tokenizer.vocab_size);
        maybe(t, "use_pca", rc.tokenizer.use_pca);
        maybe(t, "border_only", rc.tokenizer.border_only);
        maybe(t, "clockwise", rc.tokenizer.clockwise);
        maybe(t, "lex_order", rc.tokenizer.lex_order);
        maybe(t, "use_separator", rc.tokenizer.use_separator);
        maybe(t, "fit_seed", rc.tokenizer_fit_seed);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        maybe(m, "mode", rc.trainer.mode);
        maybe(m, "d_model", rc.trainer.d_model);
        maybe(m, "n_heads", rc.trainer.n_heads);
        maybe(m, "n_enc_layers", rc.trainer.n_enc_layers);
        maybe(m, "n_dec_layers", rc.trainer.n_dec_layers);
        maybe(m, "d_ff", rc.trainer.d_ff);
        maybe(m, "dropout", rc.trainer.dropout);
        maybe(m, "init_seed", rc.trainer.init_seed);
    }
    if (j.contains("trainer")) {
        const auto& t = j.at("trainer");
        maybe(t, "steps", rc.trainer.steps);
        maybe(t, "batch_size", rc.trainer.batch_size);
        maybe(t, "lr", rc.trainer.hyper.lr);
        maybe(t, "warmup_steps", rc.trainer.hyper.warmup_steps);
        maybe(t, "min_lr_frac", rc.trainer.hyper.min_lr_frac);
        maybe(t, "clip_norm", rc.trainer.hyper.clip_norm);
        maybe(t, "train_seed", rc.trainer.train_seed);
        maybe(t, "log_every", rc.trainer.log_every);
    }
    if (j.contains("analysis")) {
        const auto& a = j.at("analysis");
        maybe(a, "baseline_trials", rc.analysis_baseline_trials);
        maybe(a, "baseline_seed", rc.analysis_baseline_seed);
    }
    maybe(j, "threads", rc.threads);

    if (rc.grid_side < 1) throw ConfigError("grid_side must be >= 1");
    if (rc.piece_px < rc.tokenizer.granularity) {
        throw ConfigError("piece_px smaller than tokenizer granularity");
    }
    if (rc.missing_train.empty() || rc.missing_test.empty()) {
        throw ConfigError("missing_train / missing_test must be non-empty lists");
    }
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    RunConfig rc = run_config_from_json_text(text);
    if (rc.threads > 0) omp_set_num_threads(rc.threads);
    return rc;
}

std::string run_config_digest(const RunConfig& rc) {
    return digest_hex(run_config_json(rc).dump());
}

RunPaths run_paths(const RunConfig& rc) {
    RunPaths p;
    p.out_dir = resolve_out_dir(rc.out_dir);
    p.train_manifest = p.out_dir + "/train_manifest.json";
    p.test_manifest = p.out_dir + "/test_manifest.json";
    p.codebook = p.out_dir + "/codebook.pzcb";
    p.train_tokens = p.out_dir + "/train_tokens.pztk";
    p.test_tokens = p.out_dir + "/test_tokens.pztk";
    p.checkpoint = p.out_dir + "/checkpoint.pzck";
    p.train_log = p.out_dir + "/train_log.jsonl";
    p.eval_json = p.out_dir + "/eval.json";
    p.eval_csv = p.out_dir + "/eval_per_puzzle.csv";
    p.analysis_dir = p.out_dir + "/analysis";
    return p;
}

namespace {

Manifest build_manifest(const RunConfig& rc, const std::string& split,
                        std::size_t count, const std::vector<std::size_t>& missing) {
    Manifest m;
    m.grid_side = rc.grid_side;
    m.piece_px = rc.piece_px;
    m.config_digest = run_config_digest(rc);
    const std::uint64_t split_tag = split == "train" ? 0x7E527 : 0x7E528;

    std::vector<std::string> files;
    if (rc.corpus.kind == "files") {
        if (rc.corpus.image_dir.empty()) {
            throw ConfigError("corpus.kind=files requires corpus.image_dir");
        }
        for (const auto& entry : fs::directory_iterator(rc.corpus.image_dir)) {
            if (!entry.is_regular_file()) continue;
            const auto ext = entry.path().extension().string();
            if (ext == ".png" || ext == ".ppm") files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw DataError("no .png/.ppm images in " + rc.corpus.image_dir);
        }
    }

    for (std::size_t i = 0; i < count; ++i) {
        ManifestEntry e;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s-%06zu", split.c_str(), i);
        e.id = buf;
        if (rc.corpus.kind == "synth") {
            const std::uint64_t img_seed = mix_seed(rc.corpus.seed, split_tag * 1000003 + i);
            e.source = "synth:" + std::to_string(img_seed);
        } else {
            e.source = "file:" + files[i % files.size()];
        }
        e.grid_side = rc.grid_side;
        e.missing_count = missing[i % missing.size()];
        e.shuffle_seed = mix_seed(rc.shuffle_seed_base, split_tag * 1000003 + i);
        m.entries.push_back(std::move(e));
    }
    return m;
}

void require_file(const std::string& path, const std::string& hint) {
    if (!fs::exists(path)) {
        throw DataError("missing input " + path + " (run `" + hint + "` first)");
    }
}

}  // namespace

void stage_make_dataset(const RunConfig& rc) {
    const RunPaths p = run_paths(rc);
    fs::create_directories(p.out_dir);
    save_manifest(p.train_manifest,
                  build_manifest(rc, "train", rc.corpus.train_count, rc.missing_train));
    save_manifest(p.test_manifest,
                  build_manifest(rc, "test", rc.corpus.test_count, rc.missing_test));
}

Codebook stage_fit_tokenizer(const RunConfig& rc) {
    const RunPaths p = run_paths(rc);
    require_file(p.train_manifest, "make-dataset");
    const Manifest m = load_manifest(p.train_manifest);
    Codebook cb = fit_codebook(manifest_piece_source(m), rc.tokenizer,
                               rc.tokenizer_fit_seed);
    save_codebook(p.codebook, cb);
    return cb;
}

void stage_tokenize(const RunConfig& rc, bool debug_text) {
    const RunPaths p = run_paths(rc);
    require_file(p.codebook, "fit-tokenizer");
    const Codebook cb = load_codebook(p.codebook);
    for (const auto& [manifest_path, tokens_path] :
         {std::pair{p.train_manifest, p.train_tokens},
          std::pair{p.test_manifest, p.test_tokens}}) {
        require_file(manifest_path, "make-dataset");
        const Manifest m = load_manifest(manifest_path);
        const TokenDataset ds = tokenize_manifest(m, cb);
        save_token_dataset(tokens_path, ds);
        if (debug_text) write_token_debug_text(tokens_path + ".txt", ds);
    }
}

TrainOutcome stage_train(const RunConfig& rc) {
    const RunPaths p = run_paths(rc);
    require_file(p.train_tokens, "tokenize");
    const TokenDataset ds = load_token_dataset(p.train_tokens);
    if (rc.trainer.mode == "element_wise") {
        check_element_wise_practical(ds.config.granularity, false);
    }

    TrainConfig tc = rc.trainer;
    tc.log_path = p.train_log;
    const TrainOutcome outcome = train_model(ds, tc);

    CheckpointMeta meta;
    meta.mode = tc.mode;
    meta.step = outcome.steps_run;
    meta.init_seed = tc.init_seed;
    meta.train_seed = tc.train_seed;
    meta.codebook_digest = ds.codebook_digest;
    meta.config_digest = run_config_digest(rc);
    meta.grid_side = ds.grid_side;
    meta.n_pieces = ds.n_pieces;
    meta.super_len = ds.super_len;
    meta.separator = ds.config.use_separator;
    save_checkpoint(p.checkpoint, outcome.cfg, outcome.params, meta);
    return outcome;
}

void check_element_wise_practical(std::size_t granularity, bool force) {
    if (granularity > kElementWiseMaxGranularity && !force) {
        throw ConfigError(
            "element-wise decoding is impractical at granularity " +
            std::to_string(granularity) + ": the generated sequence grows as N*4(T-1) " +
            "tokens per puzzle (see README, element-wise mode); use index_wise or pass "
            "--force");
    }
}

EvalSummary stage_eval(const RunConfig& rc, const EvalStageOptions& opts) {
    const RunPaths p = run_paths(rc);
    const std::string tokens_path = opts.split == "train" ? p.train_tokens : p.test_tokens;
    require_file(tokens_path, "tokenize");
    require_file(p.checkpoint, "train");

    const TokenDataset ds = load_token_dataset(tokens_path);
    const Checkpoint ck = load_checkpoint(p.checkpoint);
    if (ck.meta.codebook_digest != ds.codebook_digest) {
        throw ConfigError("stale artifacts: checkpoint codebook digest " +
                          ck.meta.codebook_digest + " != token dataset digest " +
                          ds.codebook_digest);
    }

    const std::string mode = opts.mode.empty() ? ck.meta.mode : opts.mode;
    EvalOptions eo;
    if (mode == "element_wise") {
        check_element_wise_practical(ds.config.granularity, opts.force);
        if (ck.meta.mode != "element_wise") {
            throw ConfigError("checkpoint was trained index-wise; cannot decode "
                              "element-wise with a position vocabulary");
        }
        eo.mode = DecodeMode::element_wise;
    } else if (mode == "index_wise") {
        if (ck.meta.mode != "index_wise") {
            throw ConfigError("checkpoint was trained element-wise; re-train with "
                              "mode=index_wise for index-wise decoding");
        }
        eo.mode = DecodeMode::index_wise;
    } else {
        throw ConfigError("eval: unknown mode '" + mode + "'");
    }
    eo.beam_width = opts.beam_width;

    const EvalSummary summary = evaluate(ck.params, ck.cfg, ds, eo);

    // per-puzzle CSV + summary JSON
    std::string eval_json = p.eval_json;
    std::string eval_csv = p.eval_csv;
    if (opts.beam_width > 1) {
        const std::string tag = "_beam" + std::to_string(opts.beam_width);
        eval_json = p.out_dir + "/eval" + tag + ".json";
        eval_csv = p.out_dir + "/eval" + tag + "_per_puzzle.csv";
    }
    {
        std::ofstream f(eval_csv);
        if (!f) throw DataError("cannot write " + eval_csv);
        f << "id,n,missing,absolute,perfect,absolute_present,perfect_present,"
             "mean_logprob,structure_violation\n";
        for (const auto& sc : summary.per_puzzle) {
            f << sc.id << ',' << sc.n << ',' << sc.missing << ',' << sc.absolute << ','
              << sc.perfect << ',' << sc.absolute_present << ',' << sc.perfect_present
              << ',' << sc.mean_logprob << ',' << (sc.structure_violation ? 1 : 0)
              << '\n';
        }
    }
    ordered_json out;
    out["config_digest"] = run_config_digest(rc);
    out["dataset_digest"] = ds.manifest_digest;
    out["codebook_digest"] = ds.codebook_digest;
    out["mode"] = mode;
    out["beam_width"] = opts.beam_width;
    out["split"] = opts.split;
    out["absolute"] = summary.absolute;
    out["perfect"] = summary.perfect;
    out["absolute_present"] = summary.absolute_present;
    out["perfect_present"] = summary.perfect_present;
    out["n"] = summary.n_puzzles;
    out["per_puzzle_csv"] = eval_csv;
    std::ofstream f(eval_json);
    if (!f) throw DataError("cannot write " + eval_json);
    f << out.dump(2) << "\n";
    return summary;
}

void stage_analyze(const RunConfig& rc, const std::string& split) {
    const RunPaths p = run_paths(rc);
    const std::string tokens_path = split == "train" ? p.train_tokens : p.test_tokens;
    require_file(tokens_path, "tokenize");
    const TokenDataset ds = load_token_dataset(tokens_path);
    const AnalysisReport report =
        analyze_dataset(ds, rc.analysis_baseline_trials, rc.analysis_baseline_seed);
    write_analysis_csv(p.analysis_dir, report, ds.manifest_digest, run_config_digest(rc));
}

void run_all_stages(const RunConfig& rc) {
    stage_make_dataset(rc);
    stage_fit_tokenizer(rc);
    stage_tokenize(rc);
    stage_train(rc);
    stage_eval(rc);
    stage_analyze(rc);
}

}  // namespace puzzleseq
