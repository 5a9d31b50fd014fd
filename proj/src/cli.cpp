#include "puzzleseq/cli.hpp"

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/pipeline.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CommonOpts {
    std::string config_path;
    int threads = 0;
};

RunConfig load_config(const CommonOpts& c) {
    RunConfig rc = load_run_config(c.config_path);
    if (c.threads > 0) {
        rc.threads = c.threads;
        omp_set_num_threads(c.threads);
    }
    return rc;
}

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path, "run config JSON")->required();
    cmd->add_option("--threads", c.threads, "OpenMP worker count (0 = default)");
}

void print_eval(const EvalSummary& s) {
    std::cout << "absolute=" << s.absolute << " perfect=" << s.perfect
              << " absolute_present=" << s.absolute_present
              << " perfect_present=" << s.perfect_present << " n=" << s.n_puzzles
              << "\n";
}

int cmd_solve(const RunConfig& rc, const std::string& image_path, std::uint64_t synth_seed,
              bool use_synth, std::uint64_t shuffle_seed, std::size_t missing,
              std::size_t beam, bool stub_echo, std::string out_dir) {
    const RunPaths p = run_paths(rc);
    if (out_dir.empty()) out_dir = p.out_dir + "/solve";
    fs::create_directories(out_dir);

    const Codebook cb = load_codebook(p.codebook);

    const std::size_t side = rc.grid_side * rc.piece_px;
    Image img;
    if (use_synth) {
        img = synth_image(synth_seed, side);
    } else {
        img = read_image(image_path);
        img = center_crop_square(img, rc.grid_side);
        if (img.height != side) img = resize(img, side, side);
    }
    PuzzleInstance pz = shuffle_pieces(cut_image(img, rc.grid_side), rc.grid_side,
                                       shuffle_seed);
    if (missing > 0) pz = mark_missing(std::move(pz), missing, mix_seed(shuffle_seed, 0x4D495353));
    const EncodedPuzzle ep = encode_puzzle(cb, pz);

    SolveResult sr;
    if (stub_echo) {
        // plumbing-test hook: echo the ground-truth permutation
        sr.predicted = ep.labels;
        sr.per_step_logprobs.assign(ep.labels.size(), 0.0);
    } else {
        const Checkpoint ck = load_checkpoint(p.checkpoint);
        if (ck.meta.codebook_digest != codebook_content_digest(cb)) {
            throw ConfigError("stale artifacts: checkpoint was trained with a different "
                              "codebook");
        }
        if (ck.meta.mode == "element_wise") {
            check_element_wise_practical(cb.config.granularity, false);
            TokenRecord rec;
            rec.id = "solve";
            rec.encoder_ids = ep.encoder_ids;
            rec.labels = ep.labels;
            rec.missing = ep.missing;
            sr = decode_element_wise(ck.params, ck.cfg, rec, ep.super_len,
                                     ep.has_separator, cb.sep_id());
        } else {
            sr = decode_index_wise_beam(ck.params, ck.cfg, ep.encoder_ids,
                                        ep.labels.size(), beam);
        }
    }

    // map predictions back to the shuffled piece order, then render
    PermutationLabel placement(pz.pieces.size());
    for (std::size_t i = 0; i < ep.piece_order.size(); ++i) {
        placement[ep.piece_order[i]] = sr.predicted[i];
    }
    const Image solved = reassemble(pz, placement);
    write_ppm(out_dir + "/solved.ppm", solved);

    const double abs_acc = absolute_accuracy(ep.labels, sr.predicted);
    std::cout << "predicted layout (grid position -> shuffled piece index):\n";
    std::vector<std::size_t> at(pz.pieces.size());
    for (std::size_t i = 0; i < placement.size(); ++i) at[placement[i]] = i;
    for (std::size_t r = 0; r < rc.grid_side; ++r) {
        for (std::size_t c = 0; c < rc.grid_side; ++c) {
            std::cout << at[r * rc.grid_side + c]
                      << (c + 1 < rc.grid_side ? ' ' : '\n');
        }
    }
    std::cout << "absolute=" << abs_acc << " perfect="
              << perfect_accuracy(ep.labels, sr.predicted) << "\n";
    std::cout << "solved image: " << out_dir << "/solved.ppm\n";

    ordered_json doc;
    doc["absolute"] = abs_acc;
    doc["perfect"] = perfect_accuracy(ep.labels, sr.predicted);
    doc["placement"] = placement;
    doc["config_digest"] = run_config_digest(rc);
    std::ofstream f(out_dir + "/solve.json");
    f << doc.dump(2) << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"square-puzzle sequence toolkit: tokenize pieces, train a seq2seq "
                 "solver, evaluate and analyze"};
    app.require_subcommand(1);

    CommonOpts make_c, fit_c, tok_c, train_c, eval_c, solve_c, analyze_c, all_c;
    bool tok_debug_text = false;

    auto* cmd_make = app.add_subcommand("make-dataset", "write train/test manifests");
    add_common(cmd_make, make_c);

    auto* cmd_fit = app.add_subcommand("fit-tokenizer", "fit PCA+k-means codebook");
    add_common(cmd_fit, fit_c);

    auto* cmd_tok = app.add_subcommand("tokenize", "encode puzzles into token datasets");
    add_common(cmd_tok, tok_c);
    cmd_tok->add_flag("--debug-text", tok_debug_text, "also write plain-text token dumps");

    auto* cmd_train = app.add_subcommand("train", "train the seq2seq solver");
    add_common(cmd_train, train_c);

    EvalStageOptions eval_opts;
    auto* cmd_eval = app.add_subcommand("eval", "decode and score a token dataset");
    add_common(cmd_eval, eval_c);
    cmd_eval->add_option("--mode", eval_opts.mode, "index_wise | element_wise");
    cmd_eval->add_option("--beam", eval_opts.beam_width, "beam width (index-wise)");
    cmd_eval->add_option("--split", eval_opts.split, "test | train");
    cmd_eval->add_flag("--force", eval_opts.force,
                       "override the element-wise granularity guard");

    std::string solve_image, solve_out;
    std::uint64_t solve_synth_seed = 0, solve_shuffle_seed = 0;
    bool solve_use_synth = false, solve_stub = false;
    std::size_t solve_missing = 0, solve_beam = 1;
    auto* cmd_sv = app.add_subcommand("solve", "solve one puzzle and dump the image");
    add_common(cmd_sv, solve_c);
    auto* img_opt = cmd_sv->add_option("--image", solve_image, "input image (PNG or PPM)");
    auto* synth_opt =
        cmd_sv->add_option("--synth", solve_synth_seed, "procedural image seed");
    img_opt->excludes(synth_opt);
    cmd_sv->add_option("--shuffle-seed", solve_shuffle_seed, "piece shuffle seed");
    cmd_sv->add_option("--missing", solve_missing, "number of missing pieces");
    cmd_sv->add_option("--beam", solve_beam, "beam width");
    cmd_sv->add_option("--out", solve_out, "output directory");
    cmd_sv->add_flag("--stub-echo", solve_stub,
                     "bypass the model and echo ground-truth labels (plumbing test)");

    std::string analyze_split = "train";
    auto* cmd_an = app.add_subcommand("analyze", "emit entropy/Zipf/Heaps curves");
    add_common(cmd_an, analyze_c);
    cmd_an->add_option("--split", analyze_split, "train | test");

    auto* cmd_all = app.add_subcommand("run-all", "run every stage in order");
    add_common(cmd_all, all_c);

    std::vector<const char*> argv;
    argv.push_back("puzzleseq");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse((int)argv.size(), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_make->parsed()) {
            stage_make_dataset(load_config(make_c));
        } else if (cmd_fit->parsed()) {
            stage_fit_tokenizer(load_config(fit_c));
        } else if (cmd_tok->parsed()) {
            stage_tokenize(load_config(tok_c), tok_debug_text);
        } else if (cmd_train->parsed()) {
            const TrainOutcome out = stage_train(load_config(train_c));
            std::cout << "trained " << out.steps_run << " steps, final loss "
                      << out.final_loss << ", rejected " << out.rejected_steps << "\n";
        } else if (cmd_eval->parsed()) {
            print_eval(stage_eval(load_config(eval_c), eval_opts));
        } else if (cmd_sv->parsed()) {
            if (solve_image.empty() && synth_opt->count() == 0) {
                throw ConfigError("solve: provide --image or --synth");
            }
            solve_use_synth = synth_opt->count() > 0;
            return cmd_solve(load_config(solve_c), solve_image, solve_synth_seed,
                             solve_use_synth, solve_shuffle_seed, solve_missing,
                             solve_beam, solve_stub, solve_out);
        } else if (cmd_an->parsed()) {
            stage_analyze(load_config(analyze_c), analyze_split);
        } else if (cmd_all->parsed()) {
            run_all_stages(load_config(all_c));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace puzzleseq
