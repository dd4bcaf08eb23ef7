#include "dapd/train.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dapd/errors.hpp"

namespace dapd {

namespace {

// Examples per gradient chunk. Fixed (not thread-count dependent) so the
// chunk-ordered reduction gives bit-identical results for any OpenMP setting.
constexpr int kChunk = 32;
constexpr float kLnEps = 1e-5f;

constexpr std::uint64_t kStreamBatch = 0x62617463ULL;
constexpr std::uint64_t kStreamCorrupt = 0x636f7272ULL;

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapM = Eigen::Map<const MatF>;
using MapM = Eigen::Map<MatF>;
using CMapRow = Eigen::Map<const Eigen::RowVectorXf>;
using MapRow = Eigen::Map<Eigen::RowVectorXf>;

inline float gelu(float u) {
    return 0.5f * u * (1.0f + std::erf(u / std::numbers::sqrt2_v<float>));
}
inline float gelu_grad(float u) {
    const float cdf = 0.5f * (1.0f + std::erf(u / std::numbers::sqrt2_v<float>));
    const float pdf =
        std::exp(-0.5f * u * u) / std::sqrt(2.0f * std::numbers::pi_v<float>);
    return cdf + u * pdf;
}

struct LayerBuf {
    MatF xhat1, h, q, k, v, ctx, xr, xhat2, h2, u, act;
    Eigen::VectorXf rstd1, rstd2;
    MatF probs;  // (E*H*S) x S, rows grouped by (example, head)
};

// Per-thread scratch sized for a full chunk; smaller tail chunks use the top
// rows only.
struct FastWorkspace {
    explicit FastWorkspace(const ModelConfig& cfg) {
        const int R = kChunk * cfg.seq_len;
        const int d = cfg.model_dim, m = cfg.mlp_dim(), V = cfg.vocab_size;
        const int S = cfg.seq_len, H = cfg.num_heads;
        x.resize(R, d);
        layers.resize(cfg.num_layers);
        for (auto& L : layers) {
            L.xhat1.resize(R, d);
            L.h.resize(R, d);
            L.q.resize(R, d);
            L.k.resize(R, d);
            L.v.resize(R, d);
            L.ctx.resize(R, d);
            L.xr.resize(R, d);
            L.xhat2.resize(R, d);
            L.h2.resize(R, d);
            L.u.resize(R, m);
            L.act.resize(R, m);
            L.rstd1.resize(R);
            L.rstd2.resize(R);
            L.probs.resize(kChunk * H * S, S);
        }
        xhatf.resize(R, d);
        rstdf.resize(R);
        f.resize(R, d);
        logits.resize(R, V);
        dlogits.resize(R, V);
        dx.resize(R, d);
        dxr.resize(R, d);
        dh.resize(R, d);
        dq.resize(R, d);
        dk.resize(R, d);
        dv.resize(R, d);
        dctx.resize(R, d);
        du.resize(R, m);
        dact.resize(R, m);
        scores.resize(S, S);
        dscores.resize(S, S);
    }

    MatF x;
    std::vector<LayerBuf> layers;
    MatF xhatf, f, logits, dlogits;
    Eigen::VectorXf rstdf;
    MatF dx, dxr, dh, dq, dk, dv, dctx, du, dact;
    MatF scores, dscores;
};

void ln_forward_rows(const MatF& x, int R, int d, const float* g, const float* b, MatF& xhat,
                     Eigen::VectorXf& rstd, MatF& y) {
    const CMapRow gv(g, d), bv(b, d);
    for (int r = 0; r < R; ++r) {
        const auto xr = x.row(r);
        const float mean = xr.mean();
        const float var = (xr.array() - mean).square().mean();
        const float rs = 1.0f / std::sqrt(var + kLnEps);
        rstd[r] = rs;
        xhat.row(r) = (xr.array() - mean) * rs;
        y.row(r) = xhat.row(r).cwiseProduct(gv) + bv;
    }
}

void ln_backward_rows(const MatF& dy, const MatF& xhat, const Eigen::VectorXf& rstd, int R, int d,
                      const float* g, float* dg, float* db, MatF& dx) {
    const CMapRow gv(g, d);
    MapRow dgv(dg, d), dbv(db, d);
    Eigen::RowVectorXf dxh(d);
    for (int r = 0; r < R; ++r) {
        const auto dyr = dy.row(r);
        const auto xhr = xhat.row(r);
        dgv += dyr.cwiseProduct(xhr);
        dbv += dyr;
        dxh = dyr.cwiseProduct(gv);
        const float m1 = dxh.mean();
        const float m2 = dxh.cwiseProduct(xhr).mean();
        dx.row(r) = (dxh.array() - m1 - xhr.array() * m2) * rstd[r];
    }
}

int embed_id(const ModelConfig& cfg, int token) { return token == kMaskToken ? cfg.mask_id() : token; }

// Forward+backward for items [first, last) of the batch; gradients and the
// raw (unscaled) loss sum accumulate into G and the return value.
double chunk_loss_grad(const ModelConfig& cfg, const ParamLayout& layout, const float* P,
                       const std::vector<toy::Example>& data, const std::vector<BatchItem>& batch,
                       int first, int last, float* G, FastWorkspace& ws) {
    const int E = last - first;
    const int S = cfg.seq_len, d = cfg.model_dim, m = cfg.mlp_dim(), V = cfg.vocab_size;
    const int H = cfg.num_heads, dh = cfg.head_dim();
    const int nd = cfg.data_symbols();
    const int R = E * S;
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

    // ---- forward ----
    for (int e = 0; e < E; ++e) {
        const BatchItem& item = batch[first + e];
        for (int i = 0; i < S; ++i) {
            const int id = embed_id(cfg, item.xt.tokens[i]);
            ws.x.row(e * S + i) = CMapRow(P + layout.tok_emb + static_cast<std::size_t>(id) * d, d);
            if (cfg.learned_pos)
                ws.x.row(e * S + i) +=
                    CMapRow(P + layout.pos_emb + static_cast<std::size_t>(i) * d, d);
        }
    }

    for (int l = 0; l < cfg.num_layers; ++l) {
        const auto& LP = layout.layers[l];
        auto& A = ws.layers[l];
        ln_forward_rows(ws.x, R, d, P + LP.ln1_g, P + LP.ln1_b, A.xhat1, A.rstd1, A.h);

        A.q.topRows(R).noalias() = A.h.topRows(R) * CMapM(P + LP.wq, d, d);
        A.q.topRows(R).rowwise() += CMapRow(P + LP.bq, d);
        A.k.topRows(R).noalias() = A.h.topRows(R) * CMapM(P + LP.wk, d, d);
        A.k.topRows(R).rowwise() += CMapRow(P + LP.bk, d);
        A.v.topRows(R).noalias() = A.h.topRows(R) * CMapM(P + LP.wv, d, d);
        A.v.topRows(R).rowwise() += CMapRow(P + LP.bv, d);

        for (int e = 0; e < E; ++e) {
            for (int hh = 0; hh < H; ++hh) {
                const auto qb = A.q.block(e * S, hh * dh, S, dh);
                const auto kb = A.k.block(e * S, hh * dh, S, dh);
                const auto vb = A.v.block(e * S, hh * dh, S, dh);
                ws.scores.noalias() = qb * kb.transpose();
                ws.scores *= inv_sqrt_dh;
                for (int i = 0; i < S; ++i) {
                    auto row = ws.scores.row(i);
                    const float mx = row.maxCoeff();
                    row = (row.array() - mx).exp();
                    row /= row.sum();
                }
                A.probs.middleRows((e * H + hh) * S, S) = ws.scores;
                A.ctx.block(e * S, hh * dh, S, dh).noalias() = ws.scores * vb;
            }
        }

        A.xr.topRows(R).noalias() = A.ctx.topRows(R) * CMapM(P + LP.wo, d, d);
        A.xr.topRows(R).rowwise() += CMapRow(P + LP.bo, d);
        A.xr.topRows(R) += ws.x.topRows(R);

        ln_forward_rows(A.xr, R, d, P + LP.ln2_g, P + LP.ln2_b, A.xhat2, A.rstd2, A.h2);
        A.u.topRows(R).noalias() = A.h2.topRows(R) * CMapM(P + LP.w1, d, m);
        A.u.topRows(R).rowwise() += CMapRow(P + LP.b1, m);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < m; ++c) A.act(r, c) = gelu(A.u(r, c));
        ws.x.topRows(R).noalias() = A.act.topRows(R) * CMapM(P + LP.w2, m, d);
        ws.x.topRows(R).rowwise() += CMapRow(P + LP.b2, d);
        ws.x.topRows(R) += A.xr.topRows(R);
    }

    ln_forward_rows(ws.x, R, d, P + layout.final_ln_g, P + layout.final_ln_b, ws.xhatf, ws.rstdf,
                    ws.f);
    ws.logits.topRows(R).noalias() = ws.f.topRows(R) * CMapM(P + layout.head_w, d, V);
    ws.logits.topRows(R).rowwise() += CMapRow(P + layout.head_b, V);

    // ---- loss over the data symbols at masked positions ----
    double loss_sum = 0.0;
    ws.dlogits.topRows(R).setZero();
    for (int e = 0; e < E; ++e) {
        const BatchItem& item = batch[first + e];
        const toy::Example& x0 = data[item.example_idx];
        const float w = static_cast<float>(1.0 / item.t);
        for (int i = 0; i < S; ++i) {
            if (!item.xt.is_masked(i)) continue;
            const int r = e * S + i;
            float mx = ws.logits(r, 0);
            for (int c = 1; c < nd; ++c) mx = std::max(mx, ws.logits(r, c));
            float sum = 0.0f;
            for (int c = 0; c < nd; ++c) sum += std::exp(ws.logits(r, c) - mx);
            const float lse = mx + std::log(sum);
            loss_sum += static_cast<double>(w) * (lse - ws.logits(r, x0[i]));
            for (int c = 0; c < nd; ++c) {
                const float p = std::exp(ws.logits(r, c) - lse);
                ws.dlogits(r, c) = w * (p - (c == x0[i] ? 1.0f : 0.0f));
            }
        }
    }

    // ---- backward ----
    MapM(G + layout.head_w, d, V).noalias() +=
        ws.f.topRows(R).transpose() * ws.dlogits.topRows(R);
    MapRow(G + layout.head_b, V) += ws.dlogits.topRows(R).colwise().sum();
    ws.dh.topRows(R).noalias() =
        ws.dlogits.topRows(R) * CMapM(P + layout.head_w, d, V).transpose();
    ln_backward_rows(ws.dh, ws.xhatf, ws.rstdf, R, d, P + layout.final_ln_g,
                     G + layout.final_ln_g, G + layout.final_ln_b, ws.dx);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const auto& LP = layout.layers[l];
        auto& A = ws.layers[l];

        // MLP
        MapM(G + LP.w2, m, d).noalias() += A.act.topRows(R).transpose() * ws.dx.topRows(R);
        MapRow(G + LP.b2, d) += ws.dx.topRows(R).colwise().sum();
        ws.dact.topRows(R).noalias() = ws.dx.topRows(R) * CMapM(P + LP.w2, m, d).transpose();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < m; ++c) ws.du(r, c) = ws.dact(r, c) * gelu_grad(A.u(r, c));
        MapM(G + LP.w1, d, m).noalias() += A.h2.topRows(R).transpose() * ws.du.topRows(R);
        MapRow(G + LP.b1, m) += ws.du.topRows(R).colwise().sum();
        ws.dh.topRows(R).noalias() = ws.du.topRows(R) * CMapM(P + LP.w1, d, m).transpose();

        ln_backward_rows(ws.dh, A.xhat2, A.rstd2, R, d, P + LP.ln2_g, G + LP.ln2_g, G + LP.ln2_b,
                         ws.dxr);
        ws.dxr.topRows(R) += ws.dx.topRows(R);

        // attention projection
        MapM(G + LP.wo, d, d).noalias() += A.ctx.topRows(R).transpose() * ws.dxr.topRows(R);
        MapRow(G + LP.bo, d) += ws.dxr.topRows(R).colwise().sum();
        ws.dctx.topRows(R).noalias() = ws.dxr.topRows(R) * CMapM(P + LP.wo, d, d).transpose();

        ws.dq.topRows(R).setZero();
        ws.dk.topRows(R).setZero();
        ws.dv.topRows(R).setZero();
        for (int e = 0; e < E; ++e) {
            for (int hh = 0; hh < H; ++hh) {
                const auto qb = A.q.block(e * S, hh * dh, S, dh);
                const auto kb = A.k.block(e * S, hh * dh, S, dh);
                const auto vb = A.v.block(e * S, hh * dh, S, dh);
                const auto pb = A.probs.middleRows((e * H + hh) * S, S);
                const auto dctx_b = ws.dctx.block(e * S, hh * dh, S, dh);
                ws.dscores.noalias() = dctx_b * vb.transpose();  // dp
                ws.dv.block(e * S, hh * dh, S, dh).noalias() += pb.transpose() * dctx_b;
                for (int i = 0; i < S; ++i) {
                    const float dot = ws.dscores.row(i).cwiseProduct(pb.row(i)).sum();
                    ws.dscores.row(i) =
                        (pb.row(i).array() * (ws.dscores.row(i).array() - dot)).matrix() *
                        inv_sqrt_dh;
                }
                ws.dq.block(e * S, hh * dh, S, dh).noalias() += ws.dscores * kb;
                ws.dk.block(e * S, hh * dh, S, dh).noalias() += ws.dscores.transpose() * qb;
            }
        }

        MapM(G + LP.wq, d, d).noalias() += A.h.topRows(R).transpose() * ws.dq.topRows(R);
        MapRow(G + LP.bq, d) += ws.dq.topRows(R).colwise().sum();
        MapM(G + LP.wk, d, d).noalias() += A.h.topRows(R).transpose() * ws.dk.topRows(R);
        MapRow(G + LP.bk, d) += ws.dk.topRows(R).colwise().sum();
        MapM(G + LP.wv, d, d).noalias() += A.h.topRows(R).transpose() * ws.dv.topRows(R);
        MapRow(G + LP.bv, d) += ws.dv.topRows(R).colwise().sum();
        ws.dh.topRows(R).noalias() = ws.dq.topRows(R) * CMapM(P + LP.wq, d, d).transpose();
        ws.dh.topRows(R).noalias() += ws.dk.topRows(R) * CMapM(P + LP.wk, d, d).transpose();
        ws.dh.topRows(R).noalias() += ws.dv.topRows(R) * CMapM(P + LP.wv, d, d).transpose();

        ln_backward_rows(ws.dh, A.xhat1, A.rstd1, R, d, P + LP.ln1_g, G + LP.ln1_g, G + LP.ln1_b,
                         ws.dx);
        ws.dx.topRows(R) += ws.dxr.topRows(R);
    }

    for (int e = 0; e < E; ++e) {
        const BatchItem& item = batch[first + e];
        for (int i = 0; i < S; ++i) {
            const int id = embed_id(cfg, item.xt.tokens[i]);
            MapRow(G + layout.tok_emb + static_cast<std::size_t>(id) * d, d) += ws.dx.row(e * S + i);
            if (cfg.learned_pos)
                MapRow(G + layout.pos_emb + static_cast<std::size_t>(i) * d, d) +=
                    ws.dx.row(e * S + i);
        }
    }
    return loss_sum;
}

}  // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (clip_norm < 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be >= 0");
    if (t_floor < 0.0 || t_floor >= 1.0)
        throw std::invalid_argument("TrainConfig: t_floor must be in [0, 1)");
}

std::vector<BatchItem> derive_batch(const std::vector<toy::Example>& data, std::uint64_t seed,
                                    int step, int batch_size, double t_floor) {
    if (data.empty()) throw std::invalid_argument("derive_batch: empty dataset");
    if (t_floor < 0.0 || t_floor >= 1.0)
        throw std::invalid_argument("derive_batch: t_floor must be in [0, 1)");
    std::vector<BatchItem> batch(batch_size);
    for (int j = 0; j < batch_size; ++j) {
        const std::uint64_t g = static_cast<std::uint64_t>(step) * batch_size + j;
        Rng pick(Rng::derive(seed, kStreamBatch, g));
        BatchItem& item = batch[j];
        item.example_idx = static_cast<int>(pick.next_below(data.size()));
        Rng cr(Rng::derive(seed, kStreamCorrupt, g));
        item.t = t_floor + (1.0 - t_floor) * cr.next_open_unit();
        item.xt = ref::corrupt(data[item.example_idx], item.t, cr);
    }
    return batch;
}

double reference_batch_loss(const ModelConfig& cfg, std::span<const float> params,
                            const std::vector<toy::Example>& data,
                            const std::vector<BatchItem>& batch) {
    ref::Workspace<float> ws(cfg);
    double sum = 0.0;
    for (const auto& item : batch)
        sum += ref::masked_ce_loss<float>(params, data[item.example_idx], item.xt, item.t, ws);
    return sum / static_cast<double>(batch.size());
}

double reference_batch_grad(const ModelConfig& cfg, std::span<const float> params,
                            const std::vector<toy::Example>& data,
                            const std::vector<BatchItem>& batch, std::span<float> grad) {
    ref::Workspace<float> ws(cfg);
    std::fill(grad.begin(), grad.end(), 0.0f);
    double sum = 0.0;
    for (const auto& item : batch)
        sum += ref::loss_and_grad<float>(params, data[item.example_idx], item.xt, item.t, grad, ws);
    const float scale = 1.0f / static_cast<float>(batch.size());
    for (auto& g : grad) g *= scale;
    return sum / static_cast<double>(batch.size());
}

double parallel_batch_grad(const ModelConfig& cfg, std::span<const float> params,
                           const std::vector<toy::Example>& data,
                           const std::vector<BatchItem>& batch, std::span<float> grad) {
    const ParamLayout layout(cfg);
    if (params.size() != layout.total() || grad.size() != layout.total())
        throw std::invalid_argument("parallel_batch_grad: size mismatch");
    const int B = static_cast<int>(batch.size());
    const int nchunks = (B + kChunk - 1) / kChunk;

    // Every raw buffer Eigen touches gets a fixed 64-byte alignment; otherwise
    // the SIMD kernels pick run-dependent peel splits and the low bits of the
    // gradient stop being reproducible.
    using AlignedVec = std::vector<float, Eigen::aligned_allocator<float>>;
    const AlignedVec aligned_params(params.begin(), params.end());
    std::vector<AlignedVec> chunk_grads(nchunks);
    std::vector<double> chunk_loss(nchunks, 0.0);

#pragma omp parallel
    {
        FastWorkspace ws(cfg);
#pragma omp for schedule(static)
        for (int c = 0; c < nchunks; ++c) {
            chunk_grads[c].assign(layout.total(), 0.0f);
            const int first = c * kChunk;
            const int last = std::min(B, first + kChunk);
            chunk_loss[c] = chunk_loss_grad(cfg, layout, aligned_params.data(), data, batch, first,
                                            last, chunk_grads[c].data(), ws);
        }
    }

    // Ordered, elementwise reduction; independent of the thread count above.
    std::fill(grad.begin(), grad.end(), 0.0f);
    const float scale = 1.0f / static_cast<float>(B);
    for (int c = 0; c < nchunks; ++c) {
        const float* src = chunk_grads[c].data();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += src[i];
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= scale;

    double loss = 0.0;
    for (int c = 0; c < nchunks; ++c) loss += chunk_loss[c];
    return loss / static_cast<double>(B);
}

Checkpoint train(const std::vector<toy::Example>& data, const ModelConfig& model_cfg,
                 const TrainConfig& train_cfg, const std::function<void(int, double)>& log_cb) {
    model_cfg.validate();
    train_cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");

    const ParamLayout layout(model_cfg);
    // Fixed 64-byte alignment keeps every vectorized reduction over these
    // buffers bit-reproducible across runs and thread counts.
    using AlignedVec = std::vector<float, Eigen::aligned_allocator<float>>;
    const auto init = init_params<float>(model_cfg, train_cfg.seed);
    AlignedVec params(init.begin(), init.end());
    AlignedVec grad(layout.total(), 0.0f);
    AlignedVec adam_m(layout.total(), 0.0f);
    AlignedVec adam_v(layout.total(), 0.0f);

    Eigen::Map<Eigen::ArrayXf> p(params.data(), params.size());
    Eigen::Map<Eigen::ArrayXf> g(grad.data(), grad.size());
    Eigen::Map<Eigen::ArrayXf> m(adam_m.data(), adam_m.size());
    Eigen::Map<Eigen::ArrayXf> v(adam_v.data(), adam_v.size());

    const float b1 = static_cast<float>(train_cfg.beta1);
    const float b2 = static_cast<float>(train_cfg.beta2);
    const float lr = static_cast<float>(train_cfg.lr);
    const float wd = static_cast<float>(train_cfg.weight_decay);
    const float eps = static_cast<float>(train_cfg.adam_eps);

    double loss = 0.0;
    for (int step = 0; step < train_cfg.steps; ++step) {
        const auto batch =
            derive_batch(data, train_cfg.seed, step, train_cfg.batch_size, train_cfg.t_floor);
        loss = parallel_batch_grad(model_cfg, params, data, batch, grad);
        if (!std::isfinite(loss))
            throw DivergenceError("training diverged at step " + std::to_string(step) +
                                  " (non-finite loss)");

        if (train_cfg.clip_norm > 0.0) {
            double sq = 0.0;
            for (float gv : grad) sq += static_cast<double>(gv) * gv;
            const double norm = std::sqrt(sq);
            if (norm > train_cfg.clip_norm) {
                const float s = static_cast<float>(train_cfg.clip_norm / norm);
                for (auto& gv : grad) gv *= s;
            }
        }

        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g.square();
        const float bc1 = 1.0f - std::pow(b1, static_cast<float>(step + 1));
        const float bc2 = 1.0f - std::pow(b2, static_cast<float>(step + 1));
        p -= lr * ((m / bc1) / ((v / bc2).sqrt() + eps) + wd * p);

        if (log_cb) log_cb(step, loss);
    }

    Checkpoint ckpt;
    ckpt.config = model_cfg;
    ckpt.params.assign(params.begin(), params.end());
    ckpt.meta.steps_done = train_cfg.steps;
    ckpt.meta.final_loss = loss;
    ckpt.meta.seed = train_cfg.seed;
    ckpt.meta.format_version = kCheckpointVersion;
    return ckpt;
}

}  // namespace dapd
