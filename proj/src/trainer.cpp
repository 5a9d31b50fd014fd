#include "puzzleseq/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

using ordered_json = nlohmann::ordered_json;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

OptimizerState make_optimizer(const ModelConfig& cfg, ModelParams params,
                              const TrainerHyper& hyper) {
    OptimizerState st;
    st.cfg = cfg;
    st.params = std::move(params);
    st.m = zero_params(cfg);
    st.v = zero_params(cfg);
    st.hyper = hyper;
    return st;
}

double lr_at(const TrainerHyper& h, std::size_t step) {
    if (h.warmup_steps > 0 && step <= h.warmup_steps) {
        return h.lr * double(step) / double(h.warmup_steps);
    }
    const double min_lr = h.lr * h.min_lr_frac;
    if (step >= h.total_steps || h.total_steps <= h.warmup_steps) return min_lr;
    const double t =
        double(step - h.warmup_steps) / double(h.total_steps - h.warmup_steps);
    return min_lr + (h.lr - min_lr) * 0.5 * (1.0 + std::cos(kPi * t));
}

StepInfo train_step(OptimizerState& state, const ModelParams& grads) {
    StepInfo info;

    // fixed-order global norm
    double sq = 0.0;
    bool finite = true;
    grads.for_each_tensor([&](const std::string&, const Matrix& g) {
        for (double v : g.data) {
            if (!std::isfinite(v)) finite = false;
            sq += v * v;
        }
    });
    if (!finite || !std::isfinite(sq)) {
        ++state.rejected;
        return info;  // applied = false, step rejected
    }
    info.grad_norm = std::sqrt(sq);

    const double clip = state.hyper.clip_norm > 0.0 && info.grad_norm > state.hyper.clip_norm
                            ? state.hyper.clip_norm / info.grad_norm
                            : 1.0;
    ++state.step;
    info.lr = lr_at(state.hyper, state.step);
    info.applied = true;

    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(state.step));
    const double bc2 = 1.0 - std::pow(b2, double(state.step));

    // walk the three trees in lockstep through the fixed enumeration
    std::vector<Matrix*> ps, ms, vs;
    std::vector<const Matrix*> gs;
    state.params.for_each_tensor([&](const std::string&, Matrix& t) { ps.push_back(&t); });
    state.m.for_each_tensor([&](const std::string&, Matrix& t) { ms.push_back(&t); });
    state.v.for_each_tensor([&](const std::string&, Matrix& t) { vs.push_back(&t); });
    grads.for_each_tensor([&](const std::string&, const Matrix& t) { gs.push_back(&t); });

    for (std::size_t t = 0; t < ps.size(); ++t) {
        Matrix& p = *ps[t];
        Matrix& m = *ms[t];
        Matrix& v = *vs[t];
        const Matrix& g = *gs[t];
        const std::int64_t n = (std::int64_t)p.size();
#pragma omp parallel for schedule(static) if (n > 4096)
        for (std::int64_t i = 0; i < n; ++i) {
            const double gi = g.data[(std::size_t)i] * clip;
            m.data[(std::size_t)i] = b1 * m.data[(std::size_t)i] + (1.0 - b1) * gi;
            v.data[(std::size_t)i] = b2 * v.data[(std::size_t)i] + (1.0 - b2) * gi * gi;
            const double mhat = m.data[(std::size_t)i] / bc1;
            const double vhat = v.data[(std::size_t)i] / bc2;
            p.data[(std::size_t)i] -= info.lr * mhat / (std::sqrt(vhat) + state.hyper.eps);
        }
    }
    return info;
}

ModelConfig model_config_for(const TokenDataset& ds, const TrainConfig& tc) {
    if (ds.records.empty()) throw DataError("train: empty token dataset");
    const std::size_t n = ds.n_pieces;
    const std::size_t src_len = ds.records.front().encoder_ids.size();

    ModelConfig cfg;
    cfg.vocab_in = ds.total_vocab();
    cfg.d_model = tc.d_model;
    cfg.n_heads = tc.n_heads;
    cfg.n_enc_layers = tc.n_enc_layers;
    cfg.n_dec_layers = tc.n_dec_layers;
    cfg.d_ff = tc.d_ff;
    cfg.dropout_rate = tc.dropout;
    cfg.max_src_len = src_len;
    cfg.pad_in = ds.pad_id();
    if (tc.mode == "index_wise") {
        cfg.vocab_out = n + 2;
        cfg.bos_out = (std::uint32_t)n;
        cfg.pad_out = (std::uint32_t)n + 1;
        cfg.max_tgt_len = n;
    } else if (tc.mode == "element_wise") {
        cfg.vocab_out = ds.total_vocab();
        cfg.bos_out = ds.bos_id();
        cfg.pad_out = ds.pad_id();
        cfg.max_tgt_len = n * ds.super_len + (ds.config.use_separator ? n - 1 : 0);
    } else {
        throw ConfigError("train: unknown mode '" + tc.mode + "'");
    }
    cfg.validate();
    return cfg;
}

std::vector<std::uint32_t> target_sequence(const TokenDataset& ds, const TokenRecord& rec,
                                           const std::string& mode) {
    if (mode == "index_wise") return rec.labels;
    EncodedPuzzle ep;
    ep.encoder_ids = rec.encoder_ids;
    ep.labels = rec.labels;
    ep.n_pieces = rec.labels.size();
    ep.super_len = ds.super_len;
    ep.has_separator = ds.config.use_separator;
    return solved_sequence(ep, ds.sep_id());
}

TrainOutcome train_model(const TokenDataset& ds, const TrainConfig& tc) {
    const ModelConfig cfg = model_config_for(ds, tc);
    const std::size_t n_rec = ds.records.size();

    // pre-build source/target id sequences (uniform lengths enforced)
    std::vector<std::vector<std::uint32_t>> targets(n_rec);
    const std::size_t src_len = cfg.max_src_len;
    const std::size_t tgt_len = cfg.max_tgt_len;
    for (std::size_t i = 0; i < n_rec; ++i) {
        if (ds.records[i].encoder_ids.size() != src_len) {
            throw DataError("train: non-uniform encoder length at record " +
                            std::to_string(i));
        }
        targets[i] = target_sequence(ds, ds.records[i], tc.mode);
        if (targets[i].size() != tgt_len) {
            throw DataError("train: non-uniform target length at record " +
                            std::to_string(i));
        }
    }

    TrainerHyper hyper = tc.hyper;
    hyper.total_steps = tc.steps;
    OptimizerState opt =
        make_optimizer(cfg, init_params(cfg, tc.init_seed), hyper);

    std::ofstream log;
    if (!tc.log_path.empty()) {
        log.open(tc.log_path);
        if (!log) throw DataError("cannot write train log: " + tc.log_path);
    }

    std::vector<std::size_t> order(n_rec);
    for (std::size_t i = 0; i < n_rec; ++i) order[i] = i;
    std::size_t cursor = n_rec;  // forces a shuffle on first use
    std::size_t epoch = 0;

    double last_loss = 0.0;
    for (std::size_t step = 1; step <= tc.steps; ++step) {
        const std::size_t bsz = std::min(tc.batch_size, n_rec);
        Batch batch;
        batch.batch = bsz;
        batch.src_len = src_len;
        batch.tgt_len = tgt_len;
        batch.src.reserve(bsz * src_len);
        batch.tgt_in.reserve(bsz * tgt_len);
        batch.tgt_out.reserve(bsz * tgt_len);
        for (std::size_t b = 0; b < bsz; ++b) {
            if (cursor >= n_rec) {
                Rng rng(mix_seed(tc.train_seed, 0xE70C0 + epoch));
                for (std::size_t i = n_rec; i > 1; --i) {
                    const std::size_t j = (std::size_t)rng.below(i);
                    std::swap(order[i - 1], order[j]);
                }
                cursor = 0;
                ++epoch;
            }
            const std::size_t r = order[cursor++];
            const auto& rec = ds.records[r];
            batch.src.insert(batch.src.end(), rec.encoder_ids.begin(),
                             rec.encoder_ids.end());
            batch.tgt_in.push_back(cfg.bos_out);
            batch.tgt_in.insert(batch.tgt_in.end(), targets[r].begin(),
                                targets[r].end() - 1);
            batch.tgt_out.insert(batch.tgt_out.end(), targets[r].begin(),
                                 targets[r].end());
        }

        DropoutSpec drop;
        drop.rate = tc.dropout;
        drop.seed = mix_seed(tc.train_seed, 0xD407 + step);
        const LossGrads lg = loss_and_grads(opt.params, cfg, batch, drop);
        const StepInfo si = train_step(opt, lg.grads);
        last_loss = lg.loss;

        if (log && (step % tc.log_every == 0 || step == tc.steps || !si.applied)) {
            ordered_json entry;
            entry["step"] = step;
            entry["loss"] = lg.loss;
            entry["lr"] = si.lr;
            entry["grad_norm"] = si.grad_norm;
            if (!si.applied) entry["rejected"] = true;
            log << entry.dump() << "\n";
            log.flush();
        }
    }

    TrainOutcome out;
    out.cfg = cfg;
    out.params = std::move(opt.params);
    out.steps_run = opt.step;
    out.rejected_steps = opt.rejected;
    out.final_loss = last_loss;
    return out;
}

}  // namespace puzzleseq
