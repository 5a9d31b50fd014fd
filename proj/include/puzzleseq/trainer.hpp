#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puzzleseq/model.hpp"
#include "puzzleseq/tokenizer.hpp"

namespace puzzleseq {

struct TrainerHyper {
    double lr = 3e-4;
    std::size_t warmup_steps = 200;
    std::size_t total_steps = 4000;
    double min_lr_frac = 0.1;  // cosine decays from lr to lr*min_lr_frac
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam moments plus the parameters they advance. Single-writer by design.
struct OptimizerState {
    ModelConfig cfg;
    ModelParams params, m, v;
    std::size_t step = 0;
    std::size_t rejected = 0;
    TrainerHyper hyper;
};

OptimizerState make_optimizer(const ModelConfig& cfg, ModelParams params,
                              const TrainerHyper& hyper);

// Linear warmup to lr, then cosine decay to lr*min_lr_frac at total_steps.
double lr_at(const TrainerHyper& h, std::size_t step);

struct StepInfo {
    bool applied = false;  // false when the gradients contained non-finite values
    double lr = 0.0;
    double grad_norm = 0.0;
};

// One Adam update with global gradient-norm clipping. Non-finite gradients
// reject the step (parameters and moments untouched, rejection counted).
StepInfo train_step(OptimizerState& state, const ModelParams& grads);

struct TrainConfig {
    std::string mode = "index_wise";  // or "element_wise"
    std::size_t steps = 4000;
    std::size_t batch_size = 32;
    TrainerHyper hyper;
    double dropout = 0.1;
    std::uint64_t init_seed = 21;
    std::uint64_t train_seed = 31;
    std::size_t log_every = 50;
    std::string log_path;  // line-delimited JSON when non-empty

    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    std::size_t d_ff = 512;
};

struct TrainOutcome {
    ModelConfig cfg;
    ModelParams params;
    std::size_t steps_run = 0;
    std::size_t rejected_steps = 0;
    double final_loss = 0.0;
};

// Derive the model configuration a dataset implies under the given mode.
ModelConfig model_config_for(const TokenDataset& ds, const TrainConfig& tc);

// Target id sequence for one record under the given mode: grid positions
// (index-wise) or the solved token sequence (element-wise).
std::vector<std::uint32_t> target_sequence(const TokenDataset& ds, const TokenRecord& rec,
                                           const std::string& mode);

TrainOutcome train_model(const TokenDataset& ds, const TrainConfig& tc);

}  // namespace puzzleseq
