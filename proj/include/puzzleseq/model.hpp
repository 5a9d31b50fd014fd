#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "puzzleseq/matrix.hpp"

namespace puzzleseq {

// Encoder-decoder transformer sized from these fields alone. The decoder
// vocabulary is grid positions (index-wise training) or content tokens
// (element-wise training); both are plain id spaces with BOS/PAD appended.
struct ModelConfig {
    std::size_t vocab_in = 0;
    std::size_t vocab_out = 0;
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    std::size_t d_ff = 512;
    std::size_t max_src_len = 0;
    std::size_t max_tgt_len = 0;
    double dropout_rate = 0.1;
    std::uint32_t bos_out = 0;
    std::uint32_t pad_out = 0;
    std::uint32_t pad_in = 0;

    void validate() const;  // throws ConfigError on bad shape laws
    std::size_t head_dim() const { return d_model / n_heads; }
};

struct LayerNormParams {
    Matrix scale, offset;  // 1 x d_model
};

struct AttentionParams {
    Matrix wq, wk, wv, wo;  // d_model x d_model
};

struct FeedForwardParams {
    Matrix w1, b1, w2, b2;  // d_model x d_ff, 1 x d_ff, d_ff x d_model, 1 x d_model
};

struct EncoderLayerParams {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    FeedForwardParams ff;
};

struct DecoderLayerParams {
    LayerNormParams ln1;
    AttentionParams self_attn;
    LayerNormParams ln2;
    AttentionParams cross_attn;
    LayerNormParams ln3;
    FeedForwardParams ff;
};

// All weights as named tensors; doubles as the gradient container (shapes
// mirror parameters exactly).
struct ModelParams {
    Matrix src_embed, tgt_embed;
    std::vector<EncoderLayerParams> enc;
    std::vector<DecoderLayerParams> dec;
    LayerNormParams enc_ln, dec_ln;
    Matrix out_proj, out_bias;

    // fixed enumeration order shared by init, Adam, checkpoints and tests
    void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& f);
    void for_each_tensor(
        const std::function<void(const std::string&, const Matrix&)>& f) const;
    std::size_t parameter_count() const;
};

ModelParams zero_params(const ModelConfig& cfg);

// Deterministic init: scaled-uniform projections and embeddings, unit
// layer-norm scales, zero offsets/biases, small-scale output head.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Uniform-length batch, row-major [batch][len]. tgt_in is the BOS-shifted
// decoder input; tgt_out the prediction targets (pad_out ignored by the loss).
struct Batch {
    std::size_t batch = 0, src_len = 0, tgt_len = 0;
    std::vector<std::uint32_t> src, tgt_in, tgt_out;
};

struct DropoutSpec {
    double rate = 0.0;  // 0 disables; masks come from a counter hash of (seed, site, index)
    std::uint64_t seed = 0;
};

// Forward cache for one batch: every sublayer input, layer-norm statistics,
// attention probabilities and dropout masks needed for exact reverse-mode
// gradients. Freed when it goes out of scope after the step.
struct Tape {
    struct LnCache {
        Matrix xhat;
        std::vector<double> rstd;
    };
    struct AttnCache {
        Matrix q, k, v;     // packed (B*L) x d_model
        Matrix probs;       // (B*H*Lq) x Lk
        Matrix ctx;         // (B*Lq) x d_model
        Matrix sub_in;      // layer-norm output fed to the projections
        std::vector<std::uint8_t> drop;
    };
    struct FfCache {
        Matrix sub_in;  // layer-norm output
        Matrix h1;      // post-ReLU activations
        std::vector<std::uint8_t> drop;
    };
    struct EncLayerCache {
        Matrix x_in;
        LnCache ln1, ln2;
        AttnCache attn;
        FfCache ff;
    };
    struct DecLayerCache {
        Matrix x_in;
        LnCache ln1, ln2, ln3;
        AttnCache self_attn, cross_attn;
        FfCache ff;
    };

    Matrix enc_embed, dec_embed;  // embeddings after scale+position (pre dropout)
    std::vector<std::uint8_t> enc_embed_drop, dec_embed_drop;
    std::vector<EncLayerCache> enc_layers;
    std::vector<DecLayerCache> dec_layers;
    LnCache enc_ln, dec_ln;
    Matrix enc_in_final, dec_in_final;  // inputs to the final layer norms
    Matrix enc_out;                     // encoder output (after final norm)
    Matrix dec_out;                     // decoder output fed to the head
    std::vector<std::uint8_t> src_key_pad;  // batch*src_len, 1 where src is PAD
};

// Logits, one row per (batch, target step): (B*tgt_len) x vocab_out. Row t of
// a sequence depends only on target positions <= t and all source positions.
Matrix forward(const ModelParams& params, const ModelConfig& cfg, const Batch& batch,
               const DropoutSpec& dropout = {}, Tape* tape = nullptr);

struct LossGrads {
    double loss = 0.0;
    std::size_t tokens = 0;  // non-PAD target positions
    ModelParams grads;
};

// Mean token-level cross-entropy over non-PAD positions plus exact gradients.
LossGrads loss_and_grads(const ModelParams& params, const ModelConfig& cfg,
                         const Batch& batch, const DropoutSpec& dropout = {});

// ---- checkpoint file: JSON header + raw little-endian tensor blobs ----

struct CheckpointMeta {
    std::string mode;  // "index_wise" | "element_wise"
    std::size_t step = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 0;
    std::string codebook_digest;
    std::string config_digest;  // run-config lineage stamp
    std::size_t grid_side = 0;
    std::size_t n_pieces = 0;
    std::size_t super_len = 0;
    bool separator = true;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params, const CheckpointMeta& meta);

struct Checkpoint {
    ModelConfig cfg;
    ModelParams params;
    CheckpointMeta meta;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace puzzleseq
