#include "puzzleseq/model.hpp"

#include <cmath>
#include <cstring>

#include "json.hpp"
#include "puzzleseq/binio.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/kernels.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {
constexpr double kLnEps = 1e-5;
}

void ModelConfig::validate() const {
    if (vocab_in == 0 || vocab_out == 0) throw ConfigError("model: empty vocabulary");
    if (d_model == 0 || n_heads == 0) throw ConfigError("model: zero d_model or n_heads");
    if (d_model % n_heads != 0) {
        throw ConfigError("model: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (max_src_len == 0 || max_tgt_len == 0) throw ConfigError("model: zero max length");
    if (bos_out >= vocab_out || pad_out >= vocab_out) {
        throw ConfigError("model: BOS/PAD ids outside output vocabulary");
    }
    if (pad_in >= vocab_in) throw ConfigError("model: PAD id outside input vocabulary");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("model: dropout_rate must be in [0,1)");
    }
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, Matrix&)>& f) {
    f("src_embed", src_embed);
    f("tgt_embed", tgt_embed);
    for (std::size_t l = 0; l < enc.size(); ++l) {
        const std::string p = "enc" + std::to_string(l) + ".";
        auto& e = enc[l];
        f(p + "ln1.scale", e.ln1.scale);
        f(p + "ln1.offset", e.ln1.offset);
        f(p + "attn.wq", e.attn.wq);
        f(p + "attn.wk", e.attn.wk);
        f(p + "attn.wv", e.attn.wv);
        f(p + "attn.wo", e.attn.wo);
        f(p + "ln2.scale", e.ln2.scale);
        f(p + "ln2.offset", e.ln2.offset);
        f(p + "ff.w1", e.ff.w1);
        f(p + "ff.b1", e.ff.b1);
        f(p + "ff.w2", e.ff.w2);
        f(p + "ff.b2", e.ff.b2);
    }
    f("enc_ln.scale", enc_ln.scale);
    f("enc_ln.offset", enc_ln.offset);
    for (std::size_t l = 0; l < dec.size(); ++l) {
        const std::string p = "dec" + std::to_string(l) + ".";
        auto& d = dec[l];
        f(p + "ln1.scale", d.ln1.scale);
        f(p + "ln1.offset", d.ln1.offset);
        f(p + "self.wq", d.self_attn.wq);
        f(p + "self.wk", d.self_attn.wk);
        f(p + "self.wv", d.self_attn.wv);
        f(p + "self.wo", d.self_attn.wo);
        f(p + "ln2.scale", d.ln2.scale);
        f(p + "ln2.offset", d.ln2.offset);
        f(p + "cross.wq", d.cross_attn.wq);
        f(p + "cross.wk", d.cross_attn.wk);
        f(p + "cross.wv", d.cross_attn.wv);
        f(p + "cross.wo", d.cross_attn.wo);
        f(p + "ln3.scale", d.ln3.scale);
        f(p + "ln3.offset", d.ln3.offset);
        f(p + "ff.w1", d.ff.w1);
        f(p + "ff.b1", d.ff.b1);
        f(p + "ff.w2", d.ff.w2);
        f(p + "ff.b2", d.ff.b2);
    }
    f("dec_ln.scale", dec_ln.scale);
    f("dec_ln.offset", dec_ln.offset);
    f("out_proj", out_proj);
    f("out_bias", out_bias);
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&f](const std::string& name, Matrix& m) { f(name, m); });
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

namespace {

LayerNormParams ln_shape(std::size_t d) {
    LayerNormParams p;
    p.scale = Matrix(1, d);
    p.offset = Matrix(1, d);
    return p;
}

AttentionParams attn_shape(std::size_t d) {
    AttentionParams p;
    p.wq = Matrix(d, d);
    p.wk = Matrix(d, d);
    p.wv = Matrix(d, d);
    p.wo = Matrix(d, d);
    return p;
}

FeedForwardParams ff_shape(std::size_t d, std::size_t d_ff) {
    FeedForwardParams p;
    p.w1 = Matrix(d, d_ff);
    p.b1 = Matrix(1, d_ff);
    p.w2 = Matrix(d_ff, d);
    p.b2 = Matrix(1, d);
    return p;
}

}  // namespace

ModelParams zero_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.src_embed = Matrix(cfg.vocab_in, cfg.d_model);
    p.tgt_embed = Matrix(cfg.vocab_out, cfg.d_model);
    p.enc.resize(cfg.n_enc_layers);
    for (auto& e : p.enc) {
        e.ln1 = ln_shape(cfg.d_model);
        e.attn = attn_shape(cfg.d_model);
        e.ln2 = ln_shape(cfg.d_model);
        e.ff = ff_shape(cfg.d_model, cfg.d_ff);
    }
    p.enc_ln = ln_shape(cfg.d_model);
    p.dec.resize(cfg.n_dec_layers);
    for (auto& d : p.dec) {
        d.ln1 = ln_shape(cfg.d_model);
        d.self_attn = attn_shape(cfg.d_model);
        d.ln2 = ln_shape(cfg.d_model);
        d.cross_attn = attn_shape(cfg.d_model);
        d.ln3 = ln_shape(cfg.d_model);
        d.ff = ff_shape(cfg.d_model, cfg.d_ff);
    }
    p.dec_ln = ln_shape(cfg.d_model);
    p.out_proj = Matrix(cfg.d_model, cfg.vocab_out);
    p.out_bias = Matrix(1, cfg.vocab_out);
    return p;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = zero_params(cfg);
    Rng rng(seed);
    p.for_each_tensor([&](const std::string& name, Matrix& m) {
        const bool is_scale = name.ends_with("ln.scale") || name.ends_with("1.scale") ||
                              name.ends_with("2.scale") || name.ends_with("3.scale");
        const bool is_zero = name.ends_with("offset") || name.ends_with(".b1") ||
                             name.ends_with(".b2") || name == "out_bias";
        if (is_scale) {
            m.fill(1.0);
            return;
        }
        if (is_zero) return;
        // the output head starts near zero so initial logits are near-uniform
        const double bound = name == "out_proj"
                                 ? 0.02
                                 : std::sqrt(6.0 / double(m.rows + m.cols));
        for (double& v : m.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    });
    return p;
}

// ---- forward / backward internals ----

namespace {

Matrix positional_table(std::size_t len, std::size_t d) {
    Matrix pe(len, d);
    for (std::size_t pos = 0; pos < len; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double div = std::exp(-std::log(10000.0) * double(i) / double(d));
            pe.at(pos, i) = std::sin(double(pos) * div);
            if (i + 1 < d) pe.at(pos, i + 1) = std::cos(double(pos) * div);
        }
    }
    return pe;
}

// site/index counter hash; keep iff hash < rate threshold fails
bool drop_hit(std::uint64_t seed, std::uint64_t site, std::uint64_t index, double rate) {
    const std::uint64_t h = splitmix64(seed ^ (site * 0x9e3779b97f4a7c15ULL) ^
                                       (index + 0x94d049bb133111ebULL));
    return (double(h >> 11) * 0x1.0p-53) < rate;
}

void dropout_forward(Matrix& x, const DropoutSpec& spec, std::uint64_t site,
                     std::vector<std::uint8_t>& mask) {
    if (spec.rate <= 0.0) {
        mask.clear();
        return;
    }
    mask.assign(x.size(), 1);
    const double inv_keep = 1.0 / (1.0 - spec.rate);
    const std::int64_t n = (std::int64_t)x.size();
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::int64_t i = 0; i < n; ++i) {
        if (drop_hit(spec.seed, site, (std::uint64_t)i, spec.rate)) {
            mask[(std::size_t)i] = 0;
            x.data[(std::size_t)i] = 0.0;
        } else {
            x.data[(std::size_t)i] *= inv_keep;
        }
    }
}

void dropout_backward(Matrix& dx, const DropoutSpec& spec,
                      const std::vector<std::uint8_t>& mask) {
    if (spec.rate <= 0.0 || mask.empty()) return;
    const double inv_keep = 1.0 / (1.0 - spec.rate);
    const std::int64_t n = (std::int64_t)dx.size();
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::int64_t i = 0; i < n; ++i) {
        dx.data[(std::size_t)i] = mask[(std::size_t)i]
                                      ? dx.data[(std::size_t)i] * inv_keep
                                      : 0.0;
    }
}

Matrix ln_forward(const Matrix& x, const LayerNormParams& p, Tape::LnCache& cache) {
    const std::size_t d = x.cols;
    Matrix y(x.rows, d);
    cache.xhat = Matrix(x.rows, d);
    cache.rstd.assign(x.rows, 0.0);
    const std::int64_t n = (std::int64_t)x.rows;
#pragma omp parallel for schedule(static) if (n > 8)
    for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = x.row((std::size_t)i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double t = xi[j] - mean;
            var += t * t;
        }
        var /= double(d);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        cache.rstd[(std::size_t)i] = rstd;
        double* xh = cache.xhat.row((std::size_t)i);
        double* yi = y.row((std::size_t)i);
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mean) * rstd;
            yi[j] = xh[j] * p.scale.data[j] + p.offset.data[j];
        }
    }
    return y;
}

// accumulates parameter grads, returns dx
Matrix ln_backward(const Matrix& dy, const Tape::LnCache& cache, const LayerNormParams& p,
                   LayerNormParams& grad) {
    const std::size_t d = dy.cols;
    // column sums run serially in row order for determinism
    for (std::size_t i = 0; i < dy.rows; ++i) {
        const double* dyi = dy.row(i);
        const double* xh = cache.xhat.row(i);
        double* gs = grad.scale.data.data();
        double* go = grad.offset.data.data();
        for (std::size_t j = 0; j < d; ++j) {
            gs[j] += dyi[j] * xh[j];
            go[j] += dyi[j];
        }
    }
    Matrix dx(dy.rows, d);
    const std::int64_t n = (std::int64_t)dy.rows;
#pragma omp parallel for schedule(static) if (n > 8)
    for (std::int64_t i = 0; i < n; ++i) {
        const double* dyi = dy.row((std::size_t)i);
        const double* xh = cache.xhat.row((std::size_t)i);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dyi[j] * p.scale.data[j];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= double(d);
        m2 /= double(d);
        const double rstd = cache.rstd[(std::size_t)i];
        double* dxi = dx.row((std::size_t)i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dyi[j] * p.scale.data[j];
            dxi[j] = rstd * (dxh - m1 - xh[j] * m2);
        }
    }
    return dx;
}

struct AttnDims {
    std::size_t batch, lq, lk, heads, head_dim, d_model;
    bool causal;
    const std::vector<std::uint8_t>* key_pad;  // batch*lk or nullptr
};

// sub_in (already normed) projects to Q; kv_in projects to K,V. Returns the
// attention output after the Wo projection.
Matrix attn_forward(const Matrix& sub_in, const Matrix& kv_in, const AttentionParams& p,
                    const AttnDims& dims, Tape::AttnCache& cache) {
    cache.sub_in = sub_in;
    cache.q = kernels::matmul(sub_in, p.wq);
    cache.k = kernels::matmul(kv_in, p.wk);
    cache.v = kernels::matmul(kv_in, p.wv);

    const std::size_t bh = dims.batch * dims.heads;
    cache.probs = Matrix(bh * dims.lq, dims.lk);
    cache.ctx = Matrix(dims.batch * dims.lq, dims.d_model);
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.head_dim));
    const std::int64_t nbh = (std::int64_t)bh;
#pragma omp parallel for schedule(static) if (nbh > 1)
    for (std::int64_t t = 0; t < nbh; ++t) {
        const std::size_t b = (std::size_t)t / dims.heads;
        const std::size_t h = (std::size_t)t % dims.heads;
        const std::size_t hoff = h * dims.head_dim;
        for (std::size_t i = 0; i < dims.lq; ++i) {
            double* prow = cache.probs.row((std::size_t)t * dims.lq + i);
            const double* qi = cache.q.row(b * dims.lq + i) + hoff;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < dims.lk; ++j) {
                double s;
                const bool masked =
                    (dims.causal && j > i) ||
                    (dims.key_pad && (*dims.key_pad)[b * dims.lk + j]);
                if (masked) {
                    s = -std::numeric_limits<double>::infinity();
                } else {
                    const double* kj = cache.k.row(b * dims.lk + j) + hoff;
                    double dot = 0.0;
                    for (std::size_t w = 0; w < dims.head_dim; ++w) dot += qi[w] * kj[w];
                    s = dot * inv_sqrt;
                }
                prow[j] = s;
                if (s > mx) mx = s;
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < dims.lk; ++j) {
                prow[j] = prow[j] == -std::numeric_limits<double>::infinity()
                              ? 0.0
                              : std::exp(prow[j] - mx);
                sum += prow[j];
            }
            const double inv = 1.0 / sum;
            double* crow = cache.ctx.row(b * dims.lq + i) + hoff;
            for (std::size_t w = 0; w < dims.head_dim; ++w) crow[w] = 0.0;
            for (std::size_t j = 0; j < dims.lk; ++j) {
                prow[j] *= inv;
                if (prow[j] != 0.0) {
                    const double* vj = cache.v.row(b * dims.lk + j) + hoff;
                    const double a = prow[j];
                    for (std::size_t w = 0; w < dims.head_dim; ++w) crow[w] += a * vj[w];
                }
            }
        }
    }
    return kernels::matmul(cache.ctx, p.wo);
}

// d_out is the gradient at the Wo output; accumulates into grad and both
// input gradients (d_sub for the query-side normed input, d_kv for keys/values).
void attn_backward(const Matrix& d_out, const Matrix& kv_in, const AttentionParams& p,
                   const AttnDims& dims, const Tape::AttnCache& cache,
                   AttentionParams& grad, Matrix& d_sub, Matrix& d_kv) {
    kernels::matmul_tn_acc(cache.ctx, d_out, grad.wo);
    const Matrix d_ctx = kernels::matmul_nt(d_out, p.wo);

    Matrix dq(cache.q.rows, cache.q.cols);
    Matrix dk(cache.k.rows, cache.k.cols);
    Matrix dv(cache.v.rows, cache.v.cols);
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.head_dim));
    const std::size_t bh = dims.batch * dims.heads;
    const std::int64_t nbh = (std::int64_t)bh;
#pragma omp parallel for schedule(static) if (nbh > 1)
    for (std::int64_t t = 0; t < nbh; ++t) {
        const std::size_t b = (std::size_t)t / dims.heads;
        const std::size_t h = (std::size_t)t % dims.heads;
        const std::size_t hoff = h * dims.head_dim;
        std::vector<double> da(dims.lk);
        for (std::size_t i = 0; i < dims.lq; ++i) {
            const double* prow = cache.probs.row((std::size_t)t * dims.lq + i);
            const double* dctx_i = d_ctx.row(b * dims.lq + i) + hoff;
            // dA = dctx . V^T and dV += A^T dctx
            double dot_pa = 0.0;
            for (std::size_t j = 0; j < dims.lk; ++j) {
                if (prow[j] == 0.0) {
                    da[j] = 0.0;
                    continue;
                }
                const double* vj = cache.v.row(b * dims.lk + j) + hoff;
                double s = 0.0;
                for (std::size_t w = 0; w < dims.head_dim; ++w) s += dctx_i[w] * vj[w];
                da[j] = s;
                dot_pa += s * prow[j];
                double* dvj = dv.row(b * dims.lk + j) + hoff;
                const double a = prow[j];
                for (std::size_t w = 0; w < dims.head_dim; ++w) dvj[w] += a * dctx_i[w];
            }
            // softmax backward, then scores scale, then dQ/dK
            const double* qi = cache.q.row(b * dims.lq + i) + hoff;
            double* dqi = dq.row(b * dims.lq + i) + hoff;
            for (std::size_t j = 0; j < dims.lk; ++j) {
                if (prow[j] == 0.0) continue;
                const double ds = prow[j] * (da[j] - dot_pa) * inv_sqrt;
                const double* kj = cache.k.row(b * dims.lk + j) + hoff;
                double* dkj = dk.row(b * dims.lk + j) + hoff;
                for (std::size_t w = 0; w < dims.head_dim; ++w) {
                    dqi[w] += ds * kj[w];
                    dkj[w] += ds * qi[w];
                }
            }
        }
    }

    kernels::matmul_tn_acc(cache.sub_in, dq, grad.wq);
    kernels::matmul_tn_acc(kv_in, dk, grad.wk);
    kernels::matmul_tn_acc(kv_in, dv, grad.wv);

    const Matrix dxq = kernels::matmul_nt(dq, p.wq);
    const Matrix dxk = kernels::matmul_nt(dk, p.wk);
    const Matrix dxv = kernels::matmul_nt(dv, p.wv);
    const std::int64_t nq = (std::int64_t)d_sub.size();
#pragma omp parallel for schedule(static) if (nq > 4096)
    for (std::int64_t i = 0; i < nq; ++i) d_sub.data[(std::size_t)i] += dxq.data[(std::size_t)i];
    const std::int64_t nk = (std::int64_t)d_kv.size();
#pragma omp parallel for schedule(static) if (nk > 4096)
    for (std::int64_t i = 0; i < nk; ++i) {
        d_kv.data[(std::size_t)i] += dxk.data[(std::size_t)i] + dxv.data[(std::size_t)i];
    }
}

Matrix ff_forward(const Matrix& sub_in, const FeedForwardParams& p, Tape::FfCache& cache) {
    cache.sub_in = sub_in;
    Matrix h1 = kernels::matmul(sub_in, p.w1);
    const std::int64_t n = (std::int64_t)h1.rows;
#pragma omp parallel for schedule(static) if (n > 8)
    for (std::int64_t i = 0; i < n; ++i) {
        double* r = h1.row((std::size_t)i);
        for (std::size_t j = 0; j < h1.cols; ++j) {
            r[j] += p.b1.data[j];
            if (r[j] < 0.0) r[j] = 0.0;  // ReLU
        }
    }
    cache.h1 = h1;
    Matrix out = kernels::matmul(h1, p.w2);
#pragma omp parallel for schedule(static) if (n > 8)
    for (std::int64_t i = 0; i < n; ++i) {
        double* r = out.row((std::size_t)i);
        for (std::size_t j = 0; j < out.cols; ++j) r[j] += p.b2.data[j];
    }
    return out;
}

Matrix ff_backward(const Matrix& d_out, const FeedForwardParams& p,
                   const Tape::FfCache& cache, FeedForwardParams& grad) {
    for (std::size_t i = 0; i < d_out.rows; ++i) {
        const double* r = d_out.row(i);
        for (std::size_t j = 0; j < d_out.cols; ++j) grad.b2.data[j] += r[j];
    }
    kernels::matmul_tn_acc(cache.h1, d_out, grad.w2);
    Matrix dh1 = kernels::matmul_nt(d_out, p.w2);
    const std::int64_t n = (std::int64_t)dh1.size();
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::int64_t i = 0; i < n; ++i) {
        if (cache.h1.data[(std::size_t)i] <= 0.0) dh1.data[(std::size_t)i] = 0.0;
    }
    for (std::size_t i = 0; i < dh1.rows; ++i) {
        const double* r = dh1.row(i);
        for (std::size_t j = 0; j < dh1.cols; ++j) grad.b1.data[j] += r[j];
    }
    kernels::matmul_tn_acc(cache.sub_in, dh1, grad.w1);
    return kernels::matmul_nt(dh1, p.w1);
}

void add_inplace(Matrix& x, const Matrix& y) {
    const std::int64_t n = (std::int64_t)x.size();
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::int64_t i = 0; i < n; ++i) x.data[(std::size_t)i] += y.data[(std::size_t)i];
}

Matrix embed_sequence(const Matrix& table, const std::vector<std::uint32_t>& ids,
                      std::size_t batch, std::size_t len, std::size_t d,
                      const Matrix& pos) {
    Matrix x(batch * len, d);
    const double scale = std::sqrt(double(d));
    const std::int64_t n = (std::int64_t)(batch * len);
#pragma omp parallel for schedule(static) if (n > 8)
    for (std::int64_t r = 0; r < n; ++r) {
        const std::size_t p = (std::size_t)r % len;
        const double* e = table.row(ids[(std::size_t)r]);
        const double* pe = pos.row(p);
        double* xr = x.row((std::size_t)r);
        for (std::size_t j = 0; j < d; ++j) xr[j] = e[j] * scale + pe[j];
    }
    return x;
}

void embed_backward(Matrix& grad_table, const Matrix& dx,
                    const std::vector<std::uint32_t>& ids, std::size_t d) {
    const double scale = std::sqrt(double(d));
    for (std::size_t r = 0; r < dx.rows; ++r) {
        double* g = grad_table.row(ids[r]);
        const double* dr = dx.row(r);
        for (std::size_t j = 0; j < d; ++j) g[j] += dr[j] * scale;
    }
}

struct ForwardState {
    Matrix logits;
};

void check_batch(const ModelConfig& cfg, const Batch& batch) {
    if (batch.batch == 0) throw DataError("forward: empty batch");
    if (batch.src.size() != batch.batch * batch.src_len ||
        batch.tgt_in.size() != batch.batch * batch.tgt_len) {
        throw ConfigError("forward: batch buffer sizes inconsistent");
    }
    if (batch.src_len > cfg.max_src_len) {
        throw ConfigError("forward: src length " + std::to_string(batch.src_len) +
                          " exceeds max_src_len " + std::to_string(cfg.max_src_len));
    }
    if (batch.tgt_len > cfg.max_tgt_len) {
        throw ConfigError("forward: tgt length " + std::to_string(batch.tgt_len) +
                          " exceeds max_tgt_len " + std::to_string(cfg.max_tgt_len));
    }
    for (std::uint32_t v : batch.src) {
        if (v >= cfg.vocab_in) throw DataError("forward: src id out of vocabulary");
    }
    for (std::uint32_t v : batch.tgt_in) {
        if (v >= cfg.vocab_out) throw DataError("forward: tgt id out of vocabulary");
    }
}

}  // namespace

Matrix forward(const ModelParams& params, const ModelConfig& cfg, const Batch& batch,
               const DropoutSpec& dropout, Tape* tape) {
    cfg.validate();
    check_batch(cfg, batch);
    Tape local;
    Tape& tp = tape ? *tape : local;
    const std::size_t d = cfg.d_model;
    std::uint64_t site = 0;

    tp.src_key_pad.assign(batch.batch * batch.src_len, 0);
    for (std::size_t i = 0; i < tp.src_key_pad.size(); ++i) {
        tp.src_key_pad[i] = batch.src[i] == cfg.pad_in ? 1 : 0;
    }

    const Matrix pos_src = positional_table(batch.src_len, d);
    const Matrix pos_tgt = positional_table(batch.tgt_len, d);

    // encoder
    Matrix x = embed_sequence(params.src_embed, batch.src, batch.batch, batch.src_len, d,
                              pos_src);
    tp.enc_embed = x;
    dropout_forward(x, dropout, ++site, tp.enc_embed_drop);
    tp.enc_layers.resize(cfg.n_enc_layers);
    const AttnDims enc_dims{batch.batch, batch.src_len, batch.src_len, cfg.n_heads,
                            cfg.head_dim(), d, false, &tp.src_key_pad};
    for (std::size_t l = 0; l < cfg.n_enc_layers; ++l) {
        auto& cache = tp.enc_layers[l];
        const auto& lp = params.enc[l];
        cache.x_in = x;
        const Matrix normed = ln_forward(x, lp.ln1, cache.ln1);
        Matrix attn_out = attn_forward(normed, normed, lp.attn, enc_dims, cache.attn);
        dropout_forward(attn_out, dropout, ++site, cache.attn.drop);
        add_inplace(x, attn_out);
        const Matrix normed2 = ln_forward(x, lp.ln2, cache.ln2);
        Matrix ff_out = ff_forward(normed2, lp.ff, cache.ff);
        dropout_forward(ff_out, dropout, ++site, cache.ff.drop);
        add_inplace(x, ff_out);
    }
    tp.enc_in_final = x;
    tp.enc_out = ln_forward(x, params.enc_ln, tp.enc_ln);

    // decoder
    Matrix y = embed_sequence(params.tgt_embed, batch.tgt_in, batch.batch, batch.tgt_len,
                              d, pos_tgt);
    tp.dec_embed = y;
    dropout_forward(y, dropout, ++site, tp.dec_embed_drop);
    tp.dec_layers.resize(cfg.n_dec_layers);
    const AttnDims self_dims{batch.batch, batch.tgt_len, batch.tgt_len, cfg.n_heads,
                             cfg.head_dim(), d, true, nullptr};
    const AttnDims cross_dims{batch.batch, batch.tgt_len, batch.src_len, cfg.n_heads,
                              cfg.head_dim(), d, false, &tp.src_key_pad};
    for (std::size_t l = 0; l < cfg.n_dec_layers; ++l) {
        auto& cache = tp.dec_layers[l];
        const auto& lp = params.dec[l];
        cache.x_in = y;
        const Matrix normed = ln_forward(y, lp.ln1, cache.ln1);
        Matrix self_out = attn_forward(normed, normed, lp.self_attn, self_dims,
                                       cache.self_attn);
        dropout_forward(self_out, dropout, ++site, cache.self_attn.drop);
        add_inplace(y, self_out);
        const Matrix normed2 = ln_forward(y, lp.ln2, cache.ln2);
        Matrix cross_out = attn_forward(normed2, tp.enc_out, lp.cross_attn, cross_dims,
                                        cache.cross_attn);
        dropout_forward(cross_out, dropout, ++site, cache.cross_attn.drop);
        add_inplace(y, cross_out);
        const Matrix normed3 = ln_forward(y, lp.ln3, cache.ln3);
        Matrix ff_out = ff_forward(normed3, lp.ff, cache.ff);
        dropout_forward(ff_out, dropout, ++site, cache.ff.drop);
        add_inplace(y, ff_out);
    }
    tp.dec_in_final = y;
    tp.dec_out = ln_forward(y, params.dec_ln, tp.dec_ln);

    Matrix logits = kernels::matmul(tp.dec_out, params.out_proj);
    const std::int64_t n = (std::int64_t)logits.rows;
#pragma omp parallel for schedule(static) if (n > 8)
    for (std::int64_t i = 0; i < n; ++i) {
        double* r = logits.row((std::size_t)i);
        for (std::size_t j = 0; j < logits.cols; ++j) r[j] += params.out_bias.data[j];
    }
    return logits;
}

LossGrads loss_and_grads(const ModelParams& params, const ModelConfig& cfg,
                         const Batch& batch, const DropoutSpec& dropout) {
    if (batch.tgt_out.size() != batch.batch * batch.tgt_len) {
        throw ConfigError("loss_and_grads: tgt_out size mismatch");
    }
    Tape tape;
    Matrix logits = forward(params, cfg, batch, dropout, &tape);

    // token-level cross-entropy over non-PAD targets
    const std::size_t rows = logits.rows;
    std::vector<double> row_loss(rows, 0.0);
    std::vector<std::uint8_t> active(rows, 0);
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (batch.tgt_out[r] >= cfg.vocab_out) {
            throw DataError("loss_and_grads: target id out of vocabulary");
        }
        if (batch.tgt_out[r] != cfg.pad_out) {
            active[r] = 1;
            ++count;
        }
    }
    if (count == 0) throw DataError("loss_and_grads: batch has no non-PAD targets");

    Matrix dlogits(rows, logits.cols);
    const std::int64_t nr = (std::int64_t)rows;
#pragma omp parallel for schedule(static) if (nr > 8)
    for (std::int64_t r = 0; r < nr; ++r) {
        if (!active[(std::size_t)r]) continue;  // dlogits row stays zero
        const double* lr = logits.row((std::size_t)r);
        double* dr = dlogits.row((std::size_t)r);
        double mx = lr[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, lr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(lr[j] - mx);
        const double lse = mx + std::log(sum);
        const std::uint32_t target = batch.tgt_out[(std::size_t)r];
        row_loss[(std::size_t)r] = lse - lr[target];
        const double inv_count = 1.0 / double(count);
        for (std::size_t j = 0; j < logits.cols; ++j) {
            dr[j] = std::exp(lr[j] - lse) * inv_count;
        }
        dr[target] -= inv_count;
    }

    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) total += row_loss[r];

    LossGrads out;
    out.loss = total / double(count);
    out.tokens = count;
    out.grads = zero_params(cfg);
    ModelParams& g = out.grads;
    const std::size_t d = cfg.d_model;

    // head
    kernels::matmul_tn_acc(tape.dec_out, dlogits, g.out_proj);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dr = dlogits.row(r);
        for (std::size_t j = 0; j < dlogits.cols; ++j) g.out_bias.data[j] += dr[j];
    }
    Matrix dy = kernels::matmul_nt(dlogits, params.out_proj);
    dy = ln_backward(dy, tape.dec_ln, params.dec_ln, g.dec_ln);

    Matrix d_enc_out(tape.enc_out.rows, tape.enc_out.cols);
    const AttnDims self_dims{batch.batch, batch.tgt_len, batch.tgt_len, cfg.n_heads,
                             cfg.head_dim(), d, true, nullptr};
    const AttnDims cross_dims{batch.batch, batch.tgt_len, batch.src_len, cfg.n_heads,
                              cfg.head_dim(), d, false, &tape.src_key_pad};
    for (std::size_t l = cfg.n_dec_layers; l-- > 0;) {
        auto& cache = tape.dec_layers[l];
        const auto& lp = params.dec[l];
        auto& lg = g.dec[l];
        // ff sublayer
        Matrix d_ff_out = dy;
        dropout_backward(d_ff_out, dropout, cache.ff.drop);
        const Matrix d_normed3 = ff_backward(d_ff_out, lp.ff, cache.ff, lg.ff);
        add_inplace(dy, ln_backward(d_normed3, cache.ln3, lp.ln3, lg.ln3));
        // cross attention
        Matrix d_cross = dy;
        dropout_backward(d_cross, dropout, cache.cross_attn.drop);
        Matrix d_normed2(dy.rows, d);
        attn_backward(d_cross, tape.enc_out, lp.cross_attn, cross_dims, cache.cross_attn,
                      lg.cross_attn, d_normed2, d_enc_out);
        add_inplace(dy, ln_backward(d_normed2, cache.ln2, lp.ln2, lg.ln2));
        // self attention
        Matrix d_self = dy;
        dropout_backward(d_self, dropout, cache.self_attn.drop);
        Matrix d_normed1(dy.rows, d);
        Matrix d_self_kv(dy.rows, d);
        attn_backward(d_self, cache.self_attn.sub_in, lp.self_attn, self_dims,
                      cache.self_attn, lg.self_attn, d_normed1, d_self_kv);
        add_inplace(d_normed1, d_self_kv);
        add_inplace(dy, ln_backward(d_normed1, cache.ln1, lp.ln1, lg.ln1));
    }
    dropout_backward(dy, dropout, tape.dec_embed_drop);
    embed_backward(g.tgt_embed, dy, batch.tgt_in, d);

    // encoder, seeded by the accumulated cross-attention gradient
    Matrix dx = ln_backward(d_enc_out, tape.enc_ln, params.enc_ln, g.enc_ln);
    const AttnDims enc_dims{batch.batch, batch.src_len, batch.src_len, cfg.n_heads,
                            cfg.head_dim(), d, false, &tape.src_key_pad};
    for (std::size_t l = cfg.n_enc_layers; l-- > 0;) {
        auto& cache = tape.enc_layers[l];
        const auto& lp = params.enc[l];
        auto& lg = g.enc[l];
        Matrix d_ff_out = dx;
        dropout_backward(d_ff_out, dropout, cache.ff.drop);
        const Matrix d_normed2 = ff_backward(d_ff_out, lp.ff, cache.ff, lg.ff);
        add_inplace(dx, ln_backward(d_normed2, cache.ln2, lp.ln2, lg.ln2));
        Matrix d_attn = dx;
        dropout_backward(d_attn, dropout, cache.attn.drop);
        Matrix d_normed1(dx.rows, d);
        Matrix d_kv(dx.rows, d);
        attn_backward(d_attn, cache.attn.sub_in, lp.attn, enc_dims, cache.attn, lg.attn,
                      d_normed1, d_kv);
        add_inplace(d_normed1, d_kv);
        add_inplace(dx, ln_backward(d_normed1, cache.ln1, lp.ln1, lg.ln1));
    }
    dropout_backward(dx, dropout, tape.enc_embed_drop);
    embed_backward(g.src_embed, dx, batch.src, d);

    return out;
}

// ---- checkpoint io ----

namespace {

ordered_json model_config_json(const ModelConfig& c) {
    ordered_json j;
    j["vocab_in"] = c.vocab_in;
    j["vocab_out"] = c.vocab_out;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_enc_layers"] = c.n_enc_layers;
    j["n_dec_layers"] = c.n_dec_layers;
    j["d_ff"] = c.d_ff;
    j["max_src_len"] = c.max_src_len;
    j["max_tgt_len"] = c.max_tgt_len;
    j["dropout_rate"] = c.dropout_rate;
    j["bos_out"] = c.bos_out;
    j["pad_out"] = c.pad_out;
    j["pad_in"] = c.pad_in;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_in = j.at("vocab_in").get<std::size_t>();
    c.vocab_out = j.at("vocab_out").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_enc_layers = j.at("n_enc_layers").get<std::size_t>();
    c.n_dec_layers = j.at("n_dec_layers").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_src_len = j.at("max_src_len").get<std::size_t>();
    c.max_tgt_len = j.at("max_tgt_len").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.bos_out = j.at("bos_out").get<std::uint32_t>();
    c.pad_out = j.at("pad_out").get<std::uint32_t>();
    c.pad_in = j.at("pad_in").get<std::uint32_t>();
    return c;
}

constexpr char kCheckpointMagic[9] = "PZCK0001";

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params, const CheckpointMeta& meta) {
    ordered_json header;
    header["format"] = "pzck";
    header["version"] = 1;
    header["endianness"] = "little";
    header["config"] = model_config_json(cfg);
    header["mode"] = meta.mode;
    header["step"] = meta.step;
    header["init_seed"] = meta.init_seed;
    header["train_seed"] = meta.train_seed;
    header["codebook_digest"] = meta.codebook_digest;
    header["config_digest"] = meta.config_digest;
    header["grid_side"] = meta.grid_side;
    header["n_pieces"] = meta.n_pieces;
    header["super_len"] = meta.super_len;
    header["separator"] = meta.separator;

    ordered_json tensors = ordered_json::array();
    std::vector<std::uint8_t> payload;
    params.for_each_tensor([&](const std::string& name, const Matrix& m) {
        tensors.push_back(ordered_json{{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
        put_f64_array(payload, m.data.data(), m.size());
    });
    header["tensors"] = tensors;
    write_container(path, kCheckpointMagic, header.dump(), payload);
}

Checkpoint load_checkpoint(const std::string& path) {
    const Container c = read_container(path, kCheckpointMagic);
    json header;
    try {
        header = json::parse(c.header_json);
    } catch (const json::exception& e) {
        throw DataError("bad checkpoint header in " + path + ": " + e.what());
    }
    Checkpoint ck;
    ck.cfg = model_config_from_json(header.at("config"));
    ck.params = zero_params(ck.cfg);
    ck.meta.mode = header.at("mode").get<std::string>();
    ck.meta.step = header.at("step").get<std::size_t>();
    ck.meta.init_seed = header.at("init_seed").get<std::uint64_t>();
    ck.meta.train_seed = header.at("train_seed").get<std::uint64_t>();
    ck.meta.codebook_digest = header.at("codebook_digest").get<std::string>();
    ck.meta.config_digest = header.value("config_digest", std::string());
    ck.meta.grid_side = header.at("grid_side").get<std::size_t>();
    ck.meta.n_pieces = header.at("n_pieces").get<std::size_t>();
    ck.meta.super_len = header.at("super_len").get<std::size_t>();
    ck.meta.separator = header.at("separator").get<bool>();

    std::size_t pos = 0;
    std::size_t t = 0;
    const auto& tensors = header.at("tensors");
    ck.params.for_each_tensor([&](const std::string& name, Matrix& m) {
        const auto& entry = tensors.at(t++);
        if (entry.at("name").get<std::string>() != name ||
            entry.at("rows").get<std::size_t>() != m.rows ||
            entry.at("cols").get<std::size_t>() != m.cols) {
            throw DataError("checkpoint tensor mismatch at " + name + ": " + path);
        }
        get_f64_array(c.payload, pos, m.data.data(), m.size());
    });
    return ck;
}

}  // namespace puzzleseq
