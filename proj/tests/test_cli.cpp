#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "puzzleseq/cli.hpp"
#include "puzzleseq/image.hpp"

using namespace puzzleseq;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sandbox() {
    const auto dir = fs::temp_directory_path() / "puzzleseq_cli_test";
    fs::create_directories(dir);
    return dir.string();
}

std::string write_config(const std::string& dir, const std::string& name,
                         std::size_t granularity, const std::string& mode,
                         std::uint64_t fit_seed = 11) {
    json cfg;
    cfg["out_dir"] = dir + "/run_" + name;
    cfg["corpus"] = {{"kind", "synth"}, {"train_count", 30}, {"test_count", 8}, {"seed", 5}};
    cfg["grid_side"] = 2;
    cfg["piece_px"] = 8;
    cfg["tokenizer"] = {{"granularity", granularity},
                        {"reduced_dim", 8},
                        {"vocab_size", 16},
                        {"fit_seed", fit_seed}};
    cfg["model"] = {{"mode", mode},     {"d_model", 16}, {"n_heads", 2},
                    {"n_enc_layers", 1}, {"n_dec_layers", 1}, {"d_ff", 32},
                    {"dropout", 0.1},   {"init_seed", 2}};
    cfg["trainer"] = {{"steps", 20}, {"batch_size", 8}, {"lr", 1e-3},
                      {"warmup_steps", 5}, {"train_seed", 3}, {"log_every", 10}};
    const std::string path = dir + "/" + name + ".json";
    std::ofstream f(path);
    f << cfg.dump(2);
    return path;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("full pipeline through the cli with idempotent stages") {
    const std::string dir = sandbox();
    fs::remove_all(dir + "/run_main");
    const std::string cfg = write_config(dir, "main", 2, "index_wise");

    CHECK(run_cli({"make-dataset", "--config", cfg}) == 0);
    const std::string manifest = dir + "/run_main/train_manifest.json";
    REQUIRE(fs::exists(manifest));
    const std::string first = file_bytes(manifest);
    CHECK(run_cli({"make-dataset", "--config", cfg}) == 0);
    CHECK(file_bytes(manifest) == first);  // byte-identical rerun

    CHECK(run_cli({"fit-tokenizer", "--config", cfg}) == 0);
    REQUIRE(fs::exists(dir + "/run_main/codebook.pzcb"));
    CHECK(run_cli({"tokenize", "--config", cfg, "--debug-text"}) == 0);
    REQUIRE(fs::exists(dir + "/run_main/train_tokens.pztk"));
    REQUIRE(fs::exists(dir + "/run_main/train_tokens.pztk.txt"));

    // tokenize twice: byte-identical artifacts
    const std::string tok_first = file_bytes(dir + "/run_main/train_tokens.pztk");
    CHECK(run_cli({"tokenize", "--config", cfg}) == 0);
    CHECK(file_bytes(dir + "/run_main/train_tokens.pztk") == tok_first);

    CHECK(run_cli({"train", "--config", cfg}) == 0);
    REQUIRE(fs::exists(dir + "/run_main/checkpoint.pzck"));
    REQUIRE(fs::exists(dir + "/run_main/train_log.jsonl"));

    // training is seeded end to end: a rerun writes the same checkpoint
    const std::string ck_first = file_bytes(dir + "/run_main/checkpoint.pzck");
    CHECK(run_cli({"train", "--config", cfg}) == 0);
    CHECK(file_bytes(dir + "/run_main/checkpoint.pzck") == ck_first);

    CHECK(run_cli({"eval", "--config", cfg}) == 0);
    REQUIRE(fs::exists(dir + "/run_main/eval.json"));
    json eval_doc;
    std::ifstream(dir + "/run_main/eval.json") >> eval_doc;
    CHECK(eval_doc.contains("absolute"));
    CHECK(eval_doc.contains("perfect"));
    CHECK(eval_doc.contains("absolute_present"));
    CHECK(eval_doc["n"] == 8);
    REQUIRE(fs::exists(eval_doc["per_puzzle_csv"].get<std::string>()));

    // beam decoding reports into separate artifacts
    CHECK(run_cli({"eval", "--config", cfg, "--beam", "3"}) == 0);
    REQUIRE(fs::exists(dir + "/run_main/eval_beam3.json"));
    json beam_doc;
    std::ifstream(dir + "/run_main/eval_beam3.json") >> beam_doc;
    CHECK(beam_doc["beam_width"] == 3);

    CHECK(run_cli({"analyze", "--config", cfg}) == 0);
    for (const char* f : {"entropy_by_length.csv", "zipf.csv", "heaps.csv",
                          "analysis.json"}) {
        CHECK(fs::exists(dir + "/run_main/analysis/" + std::string(f)));
    }

    // train log is line-delimited JSON with the contract fields
    std::ifstream log(dir + "/run_main/train_log.jsonl");
    std::string line;
    std::getline(log, line);
    const json entry = json::parse(line);
    CHECK(entry.contains("step"));
    CHECK(entry.contains("loss"));
    CHECK(entry.contains("lr"));
    CHECK(entry.contains("grad_norm"));
}

TEST_CASE("solve with the echo stub reproduces the source image exactly") {
    const std::string dir = sandbox();
    const std::string cfg = write_config(dir, "main", 2, "index_wise");
    // reuses the artifacts of the pipeline test; rebuild if running standalone
    if (!fs::exists(dir + "/run_main/codebook.pzcb")) {
        REQUIRE(run_cli({"make-dataset", "--config", cfg}) == 0);
        REQUIRE(run_cli({"fit-tokenizer", "--config", cfg}) == 0);
    }
    const std::string out = dir + "/solve_out";
    fs::remove_all(out);
    CHECK(run_cli({"solve", "--config", cfg, "--synth", "4242", "--shuffle-seed", "7",
                   "--stub-echo", "--out", out}) == 0);
    REQUIRE(fs::exists(out + "/solved.ppm"));
    json doc;
    std::ifstream(out + "/solve.json") >> doc;
    CHECK(doc["absolute"] == 1.0);
    CHECK(doc["perfect"] == 1);

    // the reassembled dump equals the source image byte for byte
    const std::string want = dir + "/source.ppm";
    write_ppm(want, synth_image(4242, 16));
    CHECK(file_bytes(out + "/solved.ppm") == file_bytes(want));
}

TEST_CASE("eval refuses stale artifacts after the codebook changes") {
    const std::string dir = sandbox();
    const std::string cfg = write_config(dir, "main", 2, "index_wise");
    if (!fs::exists(dir + "/run_main/checkpoint.pzck")) {
        REQUIRE(run_cli({"make-dataset", "--config", cfg}) == 0);
        REQUIRE(run_cli({"fit-tokenizer", "--config", cfg}) == 0);
        REQUIRE(run_cli({"tokenize", "--config", cfg}) == 0);
        REQUIRE(run_cli({"train", "--config", cfg}) == 0);
    }
    // refit with a different seed and re-tokenize: checkpoint is now stale
    const std::string cfg2 = write_config(dir, "main", 2, "index_wise", 999);
    REQUIRE(run_cli({"fit-tokenizer", "--config", cfg2}) == 0);
    REQUIRE(run_cli({"tokenize", "--config", cfg2}) == 0);
    CHECK(run_cli({"eval", "--config", cfg2}) == 2);
}

TEST_CASE("element-wise decoding at granularity 4 is refused without --force") {
    const std::string dir = sandbox();
    fs::remove_all(dir + "/run_t4");
    const std::string cfg = write_config(dir, "t4", 4, "index_wise");
    REQUIRE(run_cli({"make-dataset", "--config", cfg}) == 0);
    REQUIRE(run_cli({"fit-tokenizer", "--config", cfg}) == 0);
    REQUIRE(run_cli({"tokenize", "--config", cfg}) == 0);
    REQUIRE(run_cli({"train", "--config", cfg}) == 0);
    CHECK(run_cli({"eval", "--config", cfg, "--mode", "element_wise"}) == 2);
}

TEST_CASE("exit codes for missing inputs and bad configs") {
    const std::string dir = sandbox();
    fs::remove_all(dir + "/run_fresh");
    const std::string cfg = write_config(dir, "fresh", 2, "index_wise");
    CHECK(run_cli({"eval", "--config", cfg}) == 3);   // nothing tokenized yet
    CHECK(run_cli({"train", "--config", cfg}) == 3);  // no tokens

    const std::string bad = dir + "/bad.json";
    std::ofstream(bad) << "{ not json";
    CHECK(run_cli({"make-dataset", "--config", bad}) == 2);
    CHECK(run_cli({"make-dataset", "--config", dir + "/does_not_exist.json"}) == 2);
    CHECK(run_cli({"no-such-command"}) == 2);
    CHECK(run_cli({"solve", "--config", cfg}) == 2);  // neither --image nor --synth
}
