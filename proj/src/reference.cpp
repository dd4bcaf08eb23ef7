#include "dapd/reference.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dapd::ref {

namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
T gelu(T u) {
    return T(0.5) * u * (T(1) + std::erf(u / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T u) {
    const T cdf = T(0.5) * (T(1) + std::erf(u / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * u * u) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + u * pdf;
}

// out = x W + b for row-major W (in x out).
template <typename T>
void linear(const T* x, int rows, int in, int out, const T* W, const T* b, T* y) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + r * in;
        T* yr = y + r * out;
        for (int o = 0; o < out; ++o) yr[o] = b ? b[o] : T(0);
        for (int i = 0; i < in; ++i) {
            const T xv = xr[i];
            if (xv == T(0)) continue;
            const T* wrow = W + static_cast<std::size_t>(i) * out;
            for (int o = 0; o < out; ++o) yr[o] += xv * wrow[o];
        }
    }
}

// Backward of linear: accumulates dW, db and writes dx.
template <typename T>
void linear_backward(const T* x, const T* dy, int rows, int in, int out, const T* W, T* dW, T* db,
                     T* dx) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + r * in;
        const T* dyr = dy + r * out;
        for (int o = 0; o < out; ++o) db[o] += dyr[o];
        for (int i = 0; i < in; ++i) {
            T* dwrow = dW + static_cast<std::size_t>(i) * out;
            const T xv = xr[i];
            for (int o = 0; o < out; ++o) dwrow[o] += xv * dyr[o];
        }
        if (dx) {
            T* dxr = dx + r * in;
            for (int i = 0; i < in; ++i) {
                const T* wrow = W + static_cast<std::size_t>(i) * out;
                T acc = T(0);
                for (int o = 0; o < out; ++o) acc += wrow[o] * dyr[o];
                dxr[i] = acc;
            }
        }
    }
}

template <typename T>
void layer_norm(const T* x, int rows, int d, const T* g, const T* b, T* xhat, T* rstd, T* y) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T mean = T(0);
        for (int c = 0; c < d; ++c) mean += xr[c];
        mean /= T(d);
        T var = T(0);
        for (int c = 0; c < d; ++c) {
            const T dv = xr[c] - mean;
            var += dv * dv;
        }
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + T(kLnEps));
        rstd[r] = rs;
        T* xh = xhat + r * d;
        T* yr = y + r * d;
        for (int c = 0; c < d; ++c) {
            xh[c] = (xr[c] - mean) * rs;
            yr[c] = g[c] * xh[c] + b[c];
        }
    }
}

// Accumulates dg/db, writes dx (may alias nothing else).
template <typename T>
void layer_norm_backward(const T* dy, const T* xhat, const T* rstd, int rows, int d, const T* g,
                         T* dg, T* db, T* dx) {
    for (int r = 0; r < rows; ++r) {
        const T* dyr = dy + r * d;
        const T* xh = xhat + r * d;
        T m1 = T(0), m2 = T(0);
        for (int c = 0; c < d; ++c) {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            const T dxh = dyr[c] * g[c];
            m1 += dxh;
            m2 += dxh * xh[c];
        }
        m1 /= T(d);
        m2 /= T(d);
        T* dxr = dx + r * d;
        const T rs = rstd[r];
        for (int c = 0; c < d; ++c) {
            const T dxh = dyr[c] * g[c];
            dxr[c] = rs * (dxh - m1 - xh[c] * m2);
        }
    }
}

template <typename T>
void softmax_row(T* row, int n) {
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (int i = 0; i < n; ++i) row[i] /= sum;
}

int embed_id(const ModelConfig& cfg, int token) {
    if (token == kMaskToken) return cfg.mask_id();
    if (token < 0 || token >= cfg.data_symbols())
        throw std::invalid_argument("forward: token out of vocabulary");
    return token;
}

}  // namespace

template <typename T>
Workspace<T>::Workspace(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const int S = cfg.seq_len, d = cfg.model_dim, m = cfg.mlp_dim(), V = cfg.vocab_size;
    const int H = cfg.num_heads;
    x0.resize(S * d);
    layers.resize(cfg.num_layers);
    for (auto& L : layers) {
        L.xhat1.resize(S * d);
        L.h.resize(S * d);
        L.q.resize(S * d);
        L.k.resize(S * d);
        L.v.resize(S * d);
        L.probs.resize(static_cast<std::size_t>(H) * S * S);
        L.ctx.resize(S * d);
        L.xr.resize(S * d);
        L.xhat2.resize(S * d);
        L.h2.resize(S * d);
        L.u.resize(S * m);
        L.act.resize(S * m);
        L.rstd1.resize(S);
        L.rstd2.resize(S);
    }
    xhatf.resize(S * d);
    rstdf.resize(S);
    f.resize(S * d);
    logits.resize(S * V);
    dx.resize(S * d);
    dxr.resize(S * d);
    dh.resize(S * d);
    dq.resize(S * d);
    dk.resize(S * d);
    dv.resize(S * d);
    dctx.resize(S * d);
    du.resize(S * m);
    dh2.resize(S * d);
    row_scratch.resize(std::max(S, std::max(d, m)));
}

template <typename T>
void forward(std::span<const T> params, const std::vector<int>& tokens, Workspace<T>& ws,
             AttentionStack* capture) {
    const ModelConfig& cfg = ws.cfg;
    const int S = cfg.seq_len, d = cfg.model_dim, m = cfg.mlp_dim(), V = cfg.vocab_size;
    const int H = cfg.num_heads, dh = cfg.head_dim();
    const ParamLayout layout(cfg);
    if (static_cast<std::size_t>(params.size()) != layout.total())
        throw std::invalid_argument("forward: parameter count mismatch");
    if (static_cast<int>(tokens.size()) != S)
        throw std::invalid_argument("forward: sequence length mismatch");
    const T* P = params.data();

    // embedding
    std::vector<T> x(ws.x0.size());
    for (int i = 0; i < S; ++i) {
        const int id = embed_id(cfg, tokens[i]);
        const T* te = P + layout.tok_emb + static_cast<std::size_t>(id) * d;
        const T* pe = cfg.learned_pos ? P + layout.pos_emb + static_cast<std::size_t>(i) * d : nullptr;
        for (int c = 0; c < d; ++c) x[i * d + c] = te[c] + (pe ? pe[c] : T(0));
    }
    ws.x0 = x;

    if (capture) {
        capture->assign(cfg.num_layers, std::vector<Eigen::MatrixXd>(H, Eigen::MatrixXd::Zero(S, S)));
    }

    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    for (int l = 0; l < cfg.num_layers; ++l) {
        const auto& LP = layout.layers[l];
        auto& A = ws.layers[l];

        layer_norm(x.data(), S, d, P + LP.ln1_g, P + LP.ln1_b, A.xhat1.data(), A.rstd1.data(),
                   A.h.data());
        linear(A.h.data(), S, d, d, P + LP.wq, P + LP.bq, A.q.data());
        linear(A.h.data(), S, d, d, P + LP.wk, P + LP.bk, A.k.data());
        linear(A.h.data(), S, d, d, P + LP.wv, P + LP.bv, A.v.data());

        for (int hh = 0; hh < H; ++hh) {
            const int off = hh * dh;
            T* probs_h = A.probs.data() + static_cast<std::size_t>(hh) * S * S;
            for (int i = 0; i < S; ++i) {
                T* prow = probs_h + i * S;
                for (int j = 0; j < S; ++j) {
                    T acc = T(0);
                    for (int c = 0; c < dh; ++c) acc += A.q[i * d + off + c] * A.k[j * d + off + c];
                    prow[j] = acc * inv_sqrt_dh;
                }
                softmax_row(prow, S);
                if (capture)
                    for (int j = 0; j < S; ++j)
                        (*capture)[l][hh](i, j) = static_cast<double>(prow[j]);
                T* crow = A.ctx.data() + i * d + off;
                for (int c = 0; c < dh; ++c) crow[c] = T(0);
                for (int j = 0; j < S; ++j) {
                    const T p = prow[j];
                    const T* vrow = A.v.data() + j * d + off;
                    for (int c = 0; c < dh; ++c) crow[c] += p * vrow[c];
                }
            }
        }

        // attention output projection + residual
        linear(A.ctx.data(), S, d, d, P + LP.wo, P + LP.bo, A.xr.data());
        for (int i = 0; i < S * d; ++i) A.xr[i] += x[i];

        layer_norm(A.xr.data(), S, d, P + LP.ln2_g, P + LP.ln2_b, A.xhat2.data(), A.rstd2.data(),
                   A.h2.data());
        linear(A.h2.data(), S, d, m, P + LP.w1, P + LP.b1, A.u.data());
        for (int i = 0; i < S * m; ++i) A.act[i] = gelu(A.u[i]);
        linear(A.act.data(), S, m, d, P + LP.w2, P + LP.b2, x.data());
        for (int i = 0; i < S * d; ++i) x[i] += A.xr[i];
    }

    layer_norm(x.data(), S, d, P + layout.final_ln_g, P + layout.final_ln_b, ws.xhatf.data(),
               ws.rstdf.data(), ws.f.data());
    linear(ws.f.data(), S, d, V, P + layout.head_w, P + layout.head_b, ws.logits.data());
}

template <typename T>
std::vector<double> data_marginal(const Workspace<T>& ws, int pos) {
    const int V = ws.cfg.vocab_size;
    const int nd = ws.cfg.data_symbols();
    const T* row = ws.logits.data() + static_cast<std::size_t>(pos) * V;
    double mx = -1e300;
    for (int c = 0; c < nd; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    std::vector<double> p(nd);
    double sum = 0.0;
    for (int c = 0; c < nd; ++c) {
        p[c] = std::exp(static_cast<double>(row[c]) - mx);
        sum += p[c];
    }
    for (int c = 0; c < nd; ++c) p[c] /= sum;
    return p;
}

template <typename T>
static T masked_nll(const ModelConfig& cfg, const std::vector<T>& logits, const toy::Example& x0,
                    const SequenceState& xt, double t, std::vector<T>* dlogits) {
    const int S = cfg.seq_len, V = cfg.vocab_size, nd = cfg.data_symbols();
    if (xt.length() != S) throw std::invalid_argument("loss: state length mismatch");
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("loss: t must be in (0, 1]");
    const T w = T(1.0 / t);
    if (dlogits) dlogits->assign(logits.size(), T(0));
    T loss = T(0);
    bool any = false;
    for (int i = 0; i < S; ++i) {
        if (!xt.is_masked(i)) continue;
        any = true;
        const T* row = logits.data() + static_cast<std::size_t>(i) * V;
        // log-softmax over the data symbols only; the mask logit never
        // contributes to the distribution.
        T mx = row[0];
        for (int c = 1; c < nd; ++c) mx = std::max(mx, row[c]);
        T sum = T(0);
        for (int c = 0; c < nd; ++c) sum += std::exp(row[c] - mx);
        const T lse = mx + std::log(sum);
        loss += w * (lse - row[x0[i]]);
        if (dlogits) {
            T* drow = dlogits->data() + static_cast<std::size_t>(i) * V;
            for (int c = 0; c < nd; ++c) {
                const T p = std::exp(row[c] - lse);
                drow[c] = w * (p - (c == x0[i] ? T(1) : T(0)));
            }
        }
    }
    if (!any) throw std::invalid_argument("loss: corrupted state has no masked positions");
    return loss;
}

template <typename T>
T masked_ce_loss(std::span<const T> params, const toy::Example& x0, const SequenceState& xt,
                 double t, Workspace<T>& ws) {
    forward(params, xt.tokens, ws);
    return masked_nll(ws.cfg, ws.logits, x0, xt, t, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
T loss_and_grad(std::span<const T> params, const toy::Example& x0, const SequenceState& xt,
                double t, std::span<T> grad, Workspace<T>& ws) {
    const ModelConfig& cfg = ws.cfg;
    const int S = cfg.seq_len, d = cfg.model_dim, m = cfg.mlp_dim(), V = cfg.vocab_size;
    const int H = cfg.num_heads, dh = cfg.head_dim();
    const ParamLayout layout(cfg);
    if (grad.size() != params.size() || params.size() != layout.total())
        throw std::invalid_argument("loss_and_grad: size mismatch");

    forward(params, xt.tokens, ws);
    std::vector<T> dlogits;
    const T loss = masked_nll(cfg, ws.logits, x0, xt, t, &dlogits);

    const T* P = params.data();
    T* G = grad.data();

    // head
    std::vector<T> df(S * d);
    linear_backward(ws.f.data(), dlogits.data(), S, d, V, P + layout.head_w, G + layout.head_w,
                    G + layout.head_b, df.data());
    // final LN
    layer_norm_backward(df.data(), ws.xhatf.data(), ws.rstdf.data(), S, d, P + layout.final_ln_g,
                        G + layout.final_ln_g, G + layout.final_ln_b, ws.dx.data());

    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const auto& LP = layout.layers[l];
        auto& A = ws.layers[l];

        // ws.dx holds the gradient at the layer output (= xr + mlp_out).
        // MLP backward
        for (int i = 0; i < S * m; ++i) ws.du[i] = T(0);
        std::vector<T>& dact = ws.du;  // reuse as d(act) first
        linear_backward(A.act.data(), ws.dx.data(), S, m, d, P + LP.w2, G + LP.w2, G + LP.b2,
                        dact.data());
        for (int i = 0; i < S * m; ++i) dact[i] *= gelu_grad(A.u[i]);
        linear_backward(A.h2.data(), dact.data(), S, d, m, P + LP.w1, G + LP.w1, G + LP.b1,
                        ws.dh2.data());
        // dxr = dx (residual) + LN2 backward contribution
        layer_norm_backward(ws.dh2.data(), A.xhat2.data(), A.rstd2.data(), S, d, P + LP.ln2_g,
                            G + LP.ln2_g, G + LP.ln2_b, ws.dxr.data());
        for (int i = 0; i < S * d; ++i) ws.dxr[i] += ws.dx[i];

        // attention output projection backward
        linear_backward(A.ctx.data(), ws.dxr.data(), S, d, d, P + LP.wo, G + LP.wo, G + LP.bo,
                        ws.dctx.data());

        std::fill(ws.dq.begin(), ws.dq.end(), T(0));
        std::fill(ws.dk.begin(), ws.dk.end(), T(0));
        std::fill(ws.dv.begin(), ws.dv.end(), T(0));
        for (int hh = 0; hh < H; ++hh) {
            const int off = hh * dh;
            const T* probs_h = A.probs.data() + static_cast<std::size_t>(hh) * S * S;
            for (int i = 0; i < S; ++i) {
                const T* prow = probs_h + i * S;
                const T* dctx_row = ws.dctx.data() + i * d + off;
                // dp_j = <dctx_i, v_j>; dv_j += p_ij * dctx_i
                T* dprow = ws.row_scratch.data();
                T dot = T(0);
                for (int j = 0; j < S; ++j) {
                    const T* vrow = A.v.data() + j * d + off;
                    T acc = T(0);
                    for (int c = 0; c < dh; ++c) acc += dctx_row[c] * vrow[c];
                    dprow[j] = acc;
                    dot += acc * prow[j];
                    T* dvrow = ws.dv.data() + j * d + off;
                    for (int c = 0; c < dh; ++c) dvrow[c] += prow[j] * dctx_row[c];
                }
                // softmax backward, then propagate through the scaled dot product
                for (int j = 0; j < S; ++j) {
                    const T dsij = prow[j] * (dprow[j] - dot) * inv_sqrt_dh;
                    if (dsij == T(0)) continue;
                    T* dqrow = ws.dq.data() + i * d + off;
                    T* dkrow = ws.dk.data() + j * d + off;
                    const T* krow = A.k.data() + j * d + off;
                    const T* qrow = A.q.data() + i * d + off;
                    for (int c = 0; c < dh; ++c) {
                        dqrow[c] += dsij * krow[c];
                        dkrow[c] += dsij * qrow[c];
                    }
                }
            }
        }

        // projection backward into dh (accumulating all three)
        std::fill(ws.dh.begin(), ws.dh.end(), T(0));
        std::vector<T> tmp(S * d);
        linear_backward(A.h.data(), ws.dq.data(), S, d, d, P + LP.wq, G + LP.wq, G + LP.bq,
                        tmp.data());
        for (int i = 0; i < S * d; ++i) ws.dh[i] += tmp[i];
        linear_backward(A.h.data(), ws.dk.data(), S, d, d, P + LP.wk, G + LP.wk, G + LP.bk,
                        tmp.data());
        for (int i = 0; i < S * d; ++i) ws.dh[i] += tmp[i];
        linear_backward(A.h.data(), ws.dv.data(), S, d, d, P + LP.wv, G + LP.wv, G + LP.bv,
                        tmp.data());
        for (int i = 0; i < S * d; ++i) ws.dh[i] += tmp[i];

        // LN1 backward + residual: gradient at the layer input
        layer_norm_backward(ws.dh.data(), A.xhat1.data(), A.rstd1.data(), S, d, P + LP.ln1_g,
                            G + LP.ln1_g, G + LP.ln1_b, ws.dx.data());
        for (int i = 0; i < S * d; ++i) ws.dx[i] += ws.dxr[i];
    }

    // embedding backward
    for (int i = 0; i < S; ++i) {
        const int id = embed_id(cfg, xt.tokens[i]);
        T* te = G + layout.tok_emb + static_cast<std::size_t>(id) * d;
        for (int c = 0; c < d; ++c) te[c] += ws.dx[i * d + c];
        if (cfg.learned_pos) {
            T* pe = G + layout.pos_emb + static_cast<std::size_t>(i) * d;
            for (int c = 0; c < d; ++c) pe[c] += ws.dx[i * d + c];
        }
    }
    return loss;
}

SequenceState corrupt(const toy::Example& x0, double t, Rng& rng) {
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("corrupt: t must be in (0, 1]");
    SequenceState s;
    s.prompt_len = 0;
    s.gen_len = toy::kSeqLen;
    s.tokens.assign(x0.begin(), x0.end());
    while (true) {
        bool any = false;
        for (int i = 0; i < toy::kSeqLen; ++i) {
            const bool mask = rng.next_unit() < t;
            s.tokens[i] = mask ? kMaskToken : x0[i];
            any = any || mask;
        }
        if (any) return s;
    }
}

template <typename T>
T mdm_loss(std::span<const T> params, const toy::Example& x0, Rng& rng, Workspace<T>& ws) {
    const double t = rng.next_open_unit();
    const SequenceState xt = corrupt(x0, t, rng);
    return masked_ce_loss(params, x0, xt, t, ws);
}

template struct Workspace<float>;
template struct Workspace<double>;
template void forward<float>(std::span<const float>, const std::vector<int>&, Workspace<float>&,
                             AttentionStack*);
template void forward<double>(std::span<const double>, const std::vector<int>&, Workspace<double>&,
                              AttentionStack*);
template std::vector<double> data_marginal<float>(const Workspace<float>&, int);
template std::vector<double> data_marginal<double>(const Workspace<double>&, int);
template float masked_ce_loss<float>(std::span<const float>, const toy::Example&,
                                     const SequenceState&, double, Workspace<float>&);
template double masked_ce_loss<double>(std::span<const double>, const toy::Example&,
                                       const SequenceState&, double, Workspace<double>&);
template float loss_and_grad<float>(std::span<const float>, const toy::Example&,
                                    const SequenceState&, double, std::span<float>,
                                    Workspace<float>&);
template double loss_and_grad<double>(std::span<const double>, const toy::Example&,
                                      const SequenceState&, double, std::span<double>,
                                      Workspace<double>&);
template float mdm_loss<float>(std::span<const float>, const toy::Example&, Rng&, Workspace<float>&);
template double mdm_loss<double>(std::span<const double>, const toy::Example&, Rng&,
                                 Workspace<double>&);

}  // namespace dapd::ref
