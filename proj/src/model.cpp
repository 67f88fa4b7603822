#include "pf/model.hpp"

#include "pf/kernels.hpp"
#include "pf/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace pf {

using json = nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Reserved token ids are fixed by the vocabulary contract (indices 0-5).
constexpr int kEosId = 2;
constexpr int kNumReserved = 6;

} // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("model config: n_layers must be >= 1");
    if (n_heads < 1) throw std::invalid_argument("model config: n_heads must be >= 1");
    if (d_model < 1 || d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (d_ff < 1) throw std::invalid_argument("model config: d_ff must be >= 1");
    if (max_seq < 64) throw std::invalid_argument("model config: max_seq must be >= 64");
    if (vocab_size < kNumReserved + 1) {
        throw std::invalid_argument("model config: vocab_size must cover the reserved tokens");
    }
}

// ---------------------------------------------------------------------------
// Params
// ---------------------------------------------------------------------------

std::string Params::layer_name(const char* name, int l) {
    return "layer" + std::to_string(l) + "." + name;
}

Params::Params(const ModelConfig& config) : config_(config) {
    config_.validate();
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto dff = static_cast<std::size_t>(config_.d_ff);

    std::size_t cursor = 0;
    auto reg = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        arrays_.push_back({name, cursor, rows, cols});
        index_[name] = cursor;
        cursor += rows * cols;
    };

    reg("tok_emb", static_cast<std::size_t>(config_.vocab_size), d);
    reg("pos_emb", static_cast<std::size_t>(config_.max_seq), d);
    for (int l = 0; l < config_.n_layers; ++l) {
        reg(layer_name("ln1_g", l), d, 1);
        reg(layer_name("ln1_b", l), d, 1);
        reg(layer_name("wq", l), d, d);
        reg(layer_name("wk", l), d, d);
        reg(layer_name("wv", l), d, d);
        reg(layer_name("wo", l), d, d);
        reg(layer_name("ln2_g", l), d, 1);
        reg(layer_name("ln2_b", l), d, 1);
        reg(layer_name("fc1_w", l), dff, d);
        reg(layer_name("fc1_b", l), dff, 1);
        reg(layer_name("fc2_w", l), d, dff);
        reg(layer_name("fc2_b", l), d, 1);
    }
    reg("lnf_g", d, 1);
    reg("lnf_b", d, 1);
    reg("cls_w", d, 1);
    reg("cls_b", 1, 1);
    reg("nli_w", 3, d);
    reg("nli_b", 3, 1);
    reg("critic_w", d, 1);

    buf_.assign(cursor, 0.0);
}

std::size_t Params::offset_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("unknown parameter array: " + name);
    return it->second;
}

void Params::init_weights(std::uint64_t seed) {
    Rng rng(seed);
    for (const ParamArray& a : arrays_) {
        double* p = buf_.data() + a.offset;
        const bool gain = a.name.size() > 1 && a.name.compare(a.name.size() - 2, 2, "_g") == 0;
        const bool bias = a.name.size() > 1 && a.name.compare(a.name.size() - 2, 2, "_b") == 0;
        if (a.name == "critic_w") {
            std::fill(p, p + a.count(), 0.0);
        } else if (gain) {
            std::fill(p, p + a.count(), 1.0);
        } else if (bias) {
            std::fill(p, p + a.count(), 0.0);
        } else {
            for (std::size_t i = 0; i < a.count(); ++i) p[i] = 0.02 * rng.next_gauss();
        }
    }
}

bool Params::all_finite() const {
    for (double v : buf_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// layer primitives
// ---------------------------------------------------------------------------

namespace {

void layernorm_forward(const double* x, const double* g, const double* b, int T, int d,
                       double* out, double* mean, double* rstd) {
    const Kernels& K = active_kernels();
    for (int t = 0; t < T; ++t) {
        const double* xr = x + static_cast<std::size_t>(t) * d;
        double* yr = out + static_cast<std::size_t>(t) * d;
        const double mu = K.sum(xr, static_cast<std::size_t>(d)) / d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = xr[i] - mu;
            var += c * c;
        }
        var /= d;
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        for (int i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * rs * g[i] + b[i];
        mean[t] = mu;
        rstd[t] = rs;
    }
}

void layernorm_backward(const double* x, const double* g, const double* mean, const double* rstd,
                        const double* dy, int T, int d, double* dx, double* dg, double* db) {
    for (int t = 0; t < T; ++t) {
        const double* xr = x + static_cast<std::size_t>(t) * d;
        const double* dyr = dy + static_cast<std::size_t>(t) * d;
        double* dxr = dx + static_cast<std::size_t>(t) * d;
        const double mu = mean[t];
        const double rs = rstd[t];
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < d; ++i) {
            const double norm = (xr[i] - mu) * rs;
            const double dn = dyr[i] * g[i];
            m1 += dn;
            m2 += dn * norm;
            dg[i] += dyr[i] * norm;
            db[i] += dyr[i];
        }
        m1 /= d;
        m2 /= d;
        for (int i = 0; i < d; ++i) {
            const double norm = (xr[i] - mu) * rs;
            dxr[i] += rs * (dyr[i] * g[i] - m1 - norm * m2);
        }
    }
}

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y[T,out] = x[T,in] * W[out,in]^T (+ optional bias[out])
void linear_forward(const double* x, const double* w, const double* bias, double* y, int T,
                    int in, int out) {
    matmul_nt(x, w, y, static_cast<std::size_t>(T), static_cast<std::size_t>(in),
              static_cast<std::size_t>(out));
    if (bias != nullptr) {
        const Kernels& K = active_kernels();
        for (int t = 0; t < T; ++t) {
            K.vadd(bias, y + static_cast<std::size_t>(t) * out, static_cast<std::size_t>(out));
        }
    }
}

void linear_backward(const double* x, const double* w, const double* dy, int T, int in, int out,
                     double* dx_acc, double* dw, double* dbias) {
    // dx += dy * W
    if (dx_acc != nullptr) {
        std::vector<double> tmp(static_cast<std::size_t>(T) * in);
        matmul_nn(dy, w, tmp.data(), static_cast<std::size_t>(T), static_cast<std::size_t>(out),
                  static_cast<std::size_t>(in));
        active_kernels().vadd(tmp.data(), dx_acc, tmp.size());
    }
    // dW += dy^T * x
    matmul_tn_acc(dy, x, dw, static_cast<std::size_t>(T), static_cast<std::size_t>(out),
                  static_cast<std::size_t>(in));
    if (dbias != nullptr) {
        for (int t = 0; t < T; ++t) {
            active_kernels().vadd(dy + static_cast<std::size_t>(t) * out, dbias,
                                  static_cast<std::size_t>(out));
        }
    }
}

} // namespace

void log_softmax_row(const double* logits, int n, double* out) {
    const double m = active_kernels().max(logits, static_cast<std::size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
    const double lse = m + std::log(sum);
    for (int i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

ForwardTrace forward(const Params& params, const ModelConfig& config, std::span<const int> ids) {
    const int T = static_cast<int>(ids.size());
    if (T < 1) throw std::invalid_argument("forward: empty input");
    if (T > config.max_seq) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(T) +
                                    " exceeds max_seq " + std::to_string(config.max_seq));
    }
    for (int id : ids) {
        if (id < 0 || id >= config.vocab_size) {
            throw std::invalid_argument("forward: token id out of range");
        }
    }

    const Kernels& K = active_kernels();
    const int d = config.d_model;
    const int dff = config.d_ff;
    const int H = config.n_heads;
    const int hd = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool causal = config.mode == AttnMode::causal;
    const std::size_t Td = static_cast<std::size_t>(T) * d;

    ForwardTrace tr;
    tr.T = T;
    tr.ids.assign(ids.begin(), ids.end());
    tr.x.resize(static_cast<std::size_t>(config.n_layers) + 1);
    tr.layers.resize(static_cast<std::size_t>(config.n_layers));

    tr.x[0].assign(Td, 0.0);
    for (int t = 0; t < T; ++t) {
        const double* te = params.tok_emb() + static_cast<std::size_t>(ids[t]) * d;
        const double* pe = params.pos_emb() + static_cast<std::size_t>(t) * d;
        double* xr = tr.x[0].data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
    }

    for (int l = 0; l < config.n_layers; ++l) {
        auto& lc = tr.layers[static_cast<std::size_t>(l)];
        const double* x_in = tr.x[static_cast<std::size_t>(l)].data();

        lc.ln1_out.assign(Td, 0.0);
        lc.ln1_mean.assign(static_cast<std::size_t>(T), 0.0);
        lc.ln1_rstd.assign(static_cast<std::size_t>(T), 0.0);
        layernorm_forward(x_in, params.layer("ln1_g", l), params.layer("ln1_b", l), T, d,
                          lc.ln1_out.data(), lc.ln1_mean.data(), lc.ln1_rstd.data());

        lc.q.assign(Td, 0.0);
        lc.k.assign(Td, 0.0);
        lc.v.assign(Td, 0.0);
        linear_forward(lc.ln1_out.data(), params.layer("wq", l), nullptr, lc.q.data(), T, d, d);
        linear_forward(lc.ln1_out.data(), params.layer("wk", l), nullptr, lc.k.data(), T, d, d);
        linear_forward(lc.ln1_out.data(), params.layer("wv", l), nullptr, lc.v.data(), T, d, d);

        lc.att.assign(static_cast<std::size_t>(H) * T * T, 0.0);
        lc.att_mix.assign(Td, 0.0);
        std::vector<double> scores(static_cast<std::size_t>(T));
        for (int h = 0; h < H; ++h) {
            const int hoff = h * hd;
            for (int t = 0; t < T; ++t) {
                const int s_end = causal ? t + 1 : T;
                const double* qrow = lc.q.data() + static_cast<std::size_t>(t) * d + hoff;
                for (int s = 0; s < s_end; ++s) {
                    scores[static_cast<std::size_t>(s)] =
                        scale * K.dot(qrow, lc.k.data() + static_cast<std::size_t>(s) * d + hoff,
                                      static_cast<std::size_t>(hd));
                }
                const double m = K.max(scores.data(), static_cast<std::size_t>(s_end));
                double sum = 0.0;
                double* arow = lc.att.data() +
                               (static_cast<std::size_t>(h) * T + static_cast<std::size_t>(t)) * T;
                for (int s = 0; s < s_end; ++s) {
                    arow[s] = std::exp(scores[static_cast<std::size_t>(s)] - m);
                    sum += arow[s];
                }
                const double inv = 1.0 / sum;
                double* mix = lc.att_mix.data() + static_cast<std::size_t>(t) * d + hoff;
                for (int s = 0; s < s_end; ++s) {
                    arow[s] *= inv;
                    K.axpy(arow[s], lc.v.data() + static_cast<std::size_t>(s) * d + hoff, mix,
                           static_cast<std::size_t>(hd));
                }
            }
        }

        lc.x_mid.assign(x_in, x_in + Td);
        std::vector<double> att_out(Td);
        linear_forward(lc.att_mix.data(), params.layer("wo", l), nullptr, att_out.data(), T, d, d);
        K.vadd(att_out.data(), lc.x_mid.data(), Td);

        lc.ln2_out.assign(Td, 0.0);
        lc.ln2_mean.assign(static_cast<std::size_t>(T), 0.0);
        lc.ln2_rstd.assign(static_cast<std::size_t>(T), 0.0);
        layernorm_forward(lc.x_mid.data(), params.layer("ln2_g", l), params.layer("ln2_b", l), T, d,
                          lc.ln2_out.data(), lc.ln2_mean.data(), lc.ln2_rstd.data());

        lc.fc1_pre.assign(static_cast<std::size_t>(T) * dff, 0.0);
        linear_forward(lc.ln2_out.data(), params.layer("fc1_w", l), params.layer("fc1_b", l),
                       lc.fc1_pre.data(), T, d, dff);
        lc.fc1_act.resize(lc.fc1_pre.size());
        for (std::size_t i = 0; i < lc.fc1_pre.size(); ++i) lc.fc1_act[i] = gelu(lc.fc1_pre[i]);

        std::vector<double> ff_out(Td);
        linear_forward(lc.fc1_act.data(), params.layer("fc2_w", l), params.layer("fc2_b", l),
                       ff_out.data(), T, dff, d);
        tr.x[static_cast<std::size_t>(l) + 1] = lc.x_mid;
        K.vadd(ff_out.data(), tr.x[static_cast<std::size_t>(l) + 1].data(), Td);
    }

    tr.lnf_mean.assign(static_cast<std::size_t>(T), 0.0);
    tr.lnf_rstd.assign(static_cast<std::size_t>(T), 0.0);
    tr.hidden.assign(Td, 0.0);
    layernorm_forward(tr.x[static_cast<std::size_t>(config.n_layers)].data(), params.head("lnf_g"),
                      params.head("lnf_b"), T, d, tr.hidden.data(), tr.lnf_mean.data(),
                      tr.lnf_rstd.data());

    tr.logits.assign(static_cast<std::size_t>(T) * config.vocab_size, 0.0);
    matmul_nt(tr.hidden.data(), params.tok_emb(), tr.logits.data(), static_cast<std::size_t>(T),
              static_cast<std::size_t>(d), static_cast<std::size_t>(config.vocab_size));

    return tr;
}

void backward(const Params& params, const ModelConfig& config, const ForwardTrace& trace,
              const double* d_logits, const double* d_hidden, std::vector<double>& grad) {
    if (grad.size() != params.size()) throw std::invalid_argument("backward: grad buffer size mismatch");
    const Kernels& K = active_kernels();
    const int T = trace.T;
    const int d = config.d_model;
    const int dff = config.d_ff;
    const int V = config.vocab_size;
    const int H = config.n_heads;
    const int hd = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool causal = config.mode == AttnMode::causal;
    const std::size_t Td = static_cast<std::size_t>(T) * d;

    auto g = [&](const std::string& name) { return grad.data() + params.offset_of(name); };

    std::vector<double> dh(Td, 0.0);
    if (d_hidden != nullptr) std::copy(d_hidden, d_hidden + Td, dh.begin());
    if (d_logits != nullptr) {
        // logits = hidden * tok_emb^T
        std::vector<double> tmp(Td);
        matmul_nn(d_logits, params.tok_emb(), tmp.data(), static_cast<std::size_t>(T),
                  static_cast<std::size_t>(V), static_cast<std::size_t>(d));
        K.vadd(tmp.data(), dh.data(), Td);
        matmul_tn_acc(d_logits, trace.hidden.data(), g("tok_emb"), static_cast<std::size_t>(T),
                      static_cast<std::size_t>(V), static_cast<std::size_t>(d));
    }

    std::vector<double> dx(Td, 0.0);
    layernorm_backward(trace.x[static_cast<std::size_t>(config.n_layers)].data(),
                       params.head("lnf_g"), trace.lnf_mean.data(), trace.lnf_rstd.data(),
                       dh.data(), T, d, dx.data(), g("lnf_g"), g("lnf_b"));

    for (int l = config.n_layers - 1; l >= 0; --l) {
        const auto& lc = trace.layers[static_cast<std::size_t>(l)];
        const double* x_in = trace.x[static_cast<std::size_t>(l)].data();

        // feed-forward branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
        std::vector<double> d_fc1_act(static_cast<std::size_t>(T) * dff, 0.0);
        linear_backward(lc.fc1_act.data(), params.layer("fc2_w", l), dx.data(), T, dff, d, nullptr,
                        g(Params::layer_name("fc2_w", l)), g(Params::layer_name("fc2_b", l)));
        {
            std::vector<double> tmp(static_cast<std::size_t>(T) * dff);
            matmul_nn(dx.data(), params.layer("fc2_w", l), tmp.data(), static_cast<std::size_t>(T),
                      static_cast<std::size_t>(d), static_cast<std::size_t>(dff));
            for (std::size_t i = 0; i < tmp.size(); ++i) {
                d_fc1_act[i] = tmp[i] * gelu_grad(lc.fc1_pre[i]);
            }
        }
        std::vector<double> d_ln2(Td, 0.0);
        linear_backward(lc.ln2_out.data(), params.layer("fc1_w", l), d_fc1_act.data(), T, d, dff,
                        d_ln2.data(), g(Params::layer_name("fc1_w", l)),
                        g(Params::layer_name("fc1_b", l)));
        // residual: dx continues into x_mid, plus the LayerNorm path
        layernorm_backward(lc.x_mid.data(), params.layer("ln2_g", l), lc.ln2_mean.data(),
                           lc.ln2_rstd.data(), d_ln2.data(), T, d, dx.data(),
                           g(Params::layer_name("ln2_g", l)), g(Params::layer_name("ln2_b", l)));

        // attention branch: x_mid = x_in + Wo(mix)
        std::vector<double> d_mix(Td, 0.0);
        linear_backward(lc.att_mix.data(), params.layer("wo", l), dx.data(), T, d, d, nullptr,
                        g(Params::layer_name("wo", l)), nullptr);
        matmul_nn(dx.data(), params.layer("wo", l), d_mix.data(), static_cast<std::size_t>(T),
                  static_cast<std::size_t>(d), static_cast<std::size_t>(d));

        std::vector<double> dq(Td, 0.0), dk(Td, 0.0), dv(Td, 0.0);
        std::vector<double> datt(static_cast<std::size_t>(T)), dscore(static_cast<std::size_t>(T));
        for (int h = 0; h < H; ++h) {
            const int hoff = h * hd;
            for (int t = 0; t < T; ++t) {
                const int s_end = causal ? t + 1 : T;
                const double* arow =
                    lc.att.data() + (static_cast<std::size_t>(h) * T + static_cast<std::size_t>(t)) * T;
                const double* dmix_row = d_mix.data() + static_cast<std::size_t>(t) * d + hoff;
                double inner = 0.0;
                for (int s = 0; s < s_end; ++s) {
                    datt[static_cast<std::size_t>(s)] =
                        K.dot(dmix_row, lc.v.data() + static_cast<std::size_t>(s) * d + hoff,
                              static_cast<std::size_t>(hd));
                    K.axpy(arow[s], dmix_row, dv.data() + static_cast<std::size_t>(s) * d + hoff,
                           static_cast<std::size_t>(hd));
                    inner += arow[s] * datt[static_cast<std::size_t>(s)];
                }
                for (int s = 0; s < s_end; ++s) {
                    dscore[static_cast<std::size_t>(s)] =
                        arow[s] * (datt[static_cast<std::size_t>(s)] - inner);
                }
                const double* qrow = lc.q.data() + static_cast<std::size_t>(t) * d + hoff;
                double* dqrow = dq.data() + static_cast<std::size_t>(t) * d + hoff;
                for (int s = 0; s < s_end; ++s) {
                    const double ds = dscore[static_cast<std::size_t>(s)] * scale;
                    K.axpy(ds, lc.k.data() + static_cast<std::size_t>(s) * d + hoff, dqrow,
                           static_cast<std::size_t>(hd));
                    K.axpy(ds, qrow, dk.data() + static_cast<std::size_t>(s) * d + hoff,
                           static_cast<std::size_t>(hd));
                }
            }
        }

        std::vector<double> d_ln1(Td, 0.0);
        linear_backward(lc.ln1_out.data(), params.layer("wq", l), dq.data(), T, d, d, d_ln1.data(),
                        g(Params::layer_name("wq", l)), nullptr);
        linear_backward(lc.ln1_out.data(), params.layer("wk", l), dk.data(), T, d, d, d_ln1.data(),
                        g(Params::layer_name("wk", l)), nullptr);
        linear_backward(lc.ln1_out.data(), params.layer("wv", l), dv.data(), T, d, d, d_ln1.data(),
                        g(Params::layer_name("wv", l)), nullptr);
        layernorm_backward(x_in, params.layer("ln1_g", l), lc.ln1_mean.data(), lc.ln1_rstd.data(),
                           d_ln1.data(), T, d, dx.data(), g(Params::layer_name("ln1_g", l)),
                           g(Params::layer_name("ln1_b", l)));
    }

    double* g_tok = g("tok_emb");
    double* g_pos = g("pos_emb");
    for (int t = 0; t < T; ++t) {
        const double* dxr = dx.data() + static_cast<std::size_t>(t) * d;
        K.vadd(dxr, g_tok + static_cast<std::size_t>(trace.ids[static_cast<std::size_t>(t)]) * d,
               static_cast<std::size_t>(d));
        K.vadd(dxr, g_pos + static_cast<std::size_t>(t) * d, static_cast<std::size_t>(d));
    }
}

double nll_loss(const Params& params, const ModelConfig& config, std::span<const int> ids,
                std::span<const std::uint8_t> target_mask, std::vector<double>* grad) {
    if (target_mask.size() != ids.size()) {
        throw std::invalid_argument("nll_loss: mask length must equal ids length");
    }
    int n_targets = 0;
    for (std::size_t k = 0; k < target_mask.size(); ++k) {
        if (target_mask[k] == 0) continue;
        if (k == 0) throw std::invalid_argument("nll_loss: position 0 cannot be a target");
        ++n_targets;
    }
    if (n_targets == 0) throw std::invalid_argument("nll_loss: empty target mask");

    const ForwardTrace tr = forward(params, config, ids);
    const int V = config.vocab_size;
    std::vector<double> logp(static_cast<std::size_t>(V));
    std::vector<double> d_logits;
    if (grad != nullptr) d_logits.assign(tr.logits.size(), 0.0);

    double loss = 0.0;
    const double inv_n = 1.0 / n_targets;
    for (std::size_t k = 1; k < target_mask.size(); ++k) {
        if (target_mask[k] == 0) continue;
        const double* row = tr.logits.data() + (k - 1) * static_cast<std::size_t>(V);
        log_softmax_row(row, V, logp.data());
        const int target = ids[k];
        loss -= logp[static_cast<std::size_t>(target)] * inv_n;
        if (grad != nullptr) {
            double* drow = d_logits.data() + (k - 1) * static_cast<std::size_t>(V);
            for (int j = 0; j < V; ++j) drow[j] += std::exp(logp[static_cast<std::size_t>(j)]) * inv_n;
            drow[target] -= inv_n;
        }
    }
    if (grad != nullptr) backward(params, config, tr, d_logits.data(), nullptr, *grad);
    return loss;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

NgramBlocker::NgramBlocker(const std::vector<std::vector<int>>& sources, int n) {
    if (n < 1) throw std::invalid_argument("ngram blocker: n must be >= 1");
    for (const auto& seq : sources) {
        if (seq.size() < static_cast<std::size_t>(n)) continue;
        for (std::size_t i = 0; i + n <= seq.size(); ++i) {
            add(std::span<const int>(seq.data() + i, static_cast<std::size_t>(n)));
        }
    }
}

void NgramBlocker::add(std::span<const int> gram) {
    if (gram.empty()) throw std::invalid_argument("ngram blocker: empty gram");
    std::vector<int> prefix(gram.begin(), gram.end() - 1);
    prefix_lengths_.insert(prefix.size());
    by_prefix_[std::move(prefix)].insert(gram.back());
}

std::vector<int> NgramBlocker::banned_tokens(std::span<const int> emitted) const {
    std::set<int> banned;
    for (std::size_t plen : prefix_lengths_) {
        if (emitted.size() < plen) continue;
        std::vector<int> suffix(emitted.end() - static_cast<std::ptrdiff_t>(plen), emitted.end());
        auto it = by_prefix_.find(suffix);
        if (it != by_prefix_.end()) banned.insert(it->second.begin(), it->second.end());
    }
    return {banned.begin(), banned.end()};
}

bool blocked_softmax(const double* logits, int V, double temperature,
                     const std::vector<int>& banned, std::vector<double>& probs) {
    probs.assign(static_cast<std::size_t>(V), 0.0);
    std::vector<char> is_banned(static_cast<std::size_t>(V), 0);
    for (int b : banned) {
        if (b >= 0 && b < V) is_banned[static_cast<std::size_t>(b)] = 1;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < V; ++j) {
        if (is_banned[static_cast<std::size_t>(j)] == 0) m = std::max(m, logits[j] / temperature);
    }
    if (!std::isfinite(m)) return false;
    double sum = 0.0;
    for (int j = 0; j < V; ++j) {
        if (is_banned[static_cast<std::size_t>(j)] != 0) continue;
        const double e = std::exp(logits[j] / temperature - m);
        probs[static_cast<std::size_t>(j)] = e;
        sum += e;
    }
    if (sum <= 0.0) return false;
    const double inv = 1.0 / sum;
    for (int j = 0; j < V; ++j) probs[static_cast<std::size_t>(j)] *= inv;
    return true;
}

namespace {

std::vector<int> with_reserved_banned(std::vector<int> banned) {
    for (int r = 0; r < kNumReserved; ++r) {
        if (r != kEosId) banned.push_back(r);
    }
    std::sort(banned.begin(), banned.end());
    banned.erase(std::unique(banned.begin(), banned.end()), banned.end());
    return banned;
}

} // namespace

GenerationResult sample_response(const Params& params, const ModelConfig& config,
                                 std::span<const int> prompt_ids, int max_new, double temperature,
                                 const NgramBlocker& blocker, std::uint64_t rng_seed) {
    if (max_new < 0 || max_new > 20) {
        throw std::invalid_argument("sample_response: max_new must be in [0, 20]");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("sample_response: temperature must be positive");
    }
    if (prompt_ids.empty()) throw std::invalid_argument("sample_response: empty prompt");
    if (static_cast<int>(prompt_ids.size()) + max_new > config.max_seq) {
        throw std::invalid_argument("sample_response: prompt plus max_new exceeds max_seq");
    }

    GenerationResult out;
    out.temperature = temperature;
    if (max_new == 0) return out;

    Rng rng(rng_seed);
    std::vector<int> seq(prompt_ids.begin(), prompt_ids.end());
    std::vector<double> probs;
    const int V = config.vocab_size;

    for (int step = 0; step < max_new; ++step) {
        const ForwardTrace tr = forward(params, config, seq);
        const double* row =
            tr.logits.data() + (static_cast<std::size_t>(tr.T) - 1) * static_cast<std::size_t>(V);
        std::vector<int> banned = with_reserved_banned(blocker.banned_tokens(out.ids));
        int next;
        double logprob;
        if (blocked_softmax(row, V, temperature, banned, probs)) {
            next = static_cast<int>(rng.categorical(probs.data(), probs.size()));
            logprob = std::log(probs[static_cast<std::size_t>(next)]);
        } else {
            // blocking removed everything: fall back to EOS with certainty
            next = kEosId;
            logprob = 0.0;
        }
        out.ids.push_back(next);
        out.logprobs.push_back(logprob);
        out.banned.push_back(std::move(banned));
        seq.push_back(next);
        if (next == kEosId) break;
    }

    // hidden states at the emitted positions, from one pass over the full
    // sequence (identical values by causality)
    const ForwardTrace tr = forward(params, config, seq);
    const int d = config.d_model;
    const std::size_t p = prompt_ids.size();
    out.hidden.assign(out.ids.size() * static_cast<std::size_t>(d), 0.0);
    for (std::size_t k = 0; k < out.ids.size(); ++k) {
        const double* src = tr.hidden.data() + (p + k) * static_cast<std::size_t>(d);
        std::copy(src, src + d, out.hidden.data() + k * static_cast<std::size_t>(d));
    }
    return out;
}

std::vector<double> recompute_logprobs(const Params& params, const ModelConfig& config,
                                       std::span<const int> prompt_ids,
                                       const GenerationResult& gen) {
    std::vector<int> seq(prompt_ids.begin(), prompt_ids.end());
    seq.insert(seq.end(), gen.ids.begin(), gen.ids.end());
    const ForwardTrace tr = forward(params, config, seq);
    const int V = config.vocab_size;
    std::vector<double> probs;
    std::vector<double> out(gen.ids.size(), 0.0);
    for (std::size_t k = 0; k < gen.ids.size(); ++k) {
        const double* row = tr.logits.data() +
                            (prompt_ids.size() + k - 1) * static_cast<std::size_t>(V);
        if (blocked_softmax(row, V, gen.temperature, gen.banned[k], probs)) {
            out[k] = std::log(probs[static_cast<std::size_t>(gen.ids[k])]);
        } else {
            out[k] = 0.0; // forced EOS step
        }
    }
    return out;
}

std::vector<double> encode_cls(const Params& params, const ModelConfig& config,
                               std::span<const int> ids) {
    constexpr int kClsId = 4;
    if (ids.empty() || ids[0] != kClsId) {
        throw std::invalid_argument("encode_cls: input must begin with the CLS token");
    }
    const ForwardTrace tr = forward(params, config, ids);
    return {tr.hidden.begin(), tr.hidden.begin() + config.d_model};
}

std::vector<double> mean_pool_embed(const Params& params, const ModelConfig& config,
                                    std::span<const int> ids) {
    if (ids.empty()) throw std::invalid_argument("mean_pool_embed: empty input");
    const int d = config.d_model;
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int id : ids) {
        if (id < 0 || id >= config.vocab_size) {
            throw std::invalid_argument("mean_pool_embed: token id out of range");
        }
        active_kernels().vadd(params.tok_emb() + static_cast<std::size_t>(id) * d, out.data(),
                              static_cast<std::size_t>(d));
    }
    active_kernels().scal(1.0 / static_cast<double>(ids.size()), out.data(),
                          static_cast<std::size_t>(d));
    return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void adam_step(Params& params, const std::vector<double>& grad, AdamState& state, double lr) {
    if (grad.size() != params.size()) throw std::invalid_argument("adam_step: grad size mismatch");
    for (double v : grad) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("adam_step: non-finite gradient; aborting the update");
        }
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimizer state shape mismatch");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    active_kernels().adam_update(params.data(), grad.data(), state.m.data(), state.v.data(),
                                 params.size(), lr, kAdamBeta1, kAdamBeta2, kAdamEps, bc1, bc2);
    if (!params.all_finite()) {
        throw std::runtime_error("adam_step: parameters became non-finite");
    }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::uint32_t to_le(float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) {
        u = __builtin_bswap32(u);
    }
    return u;
}

float from_le(std::uint32_t u) {
    if constexpr (std::endian::native == std::endian::big) {
        u = __builtin_bswap32(u);
    }
    return std::bit_cast<float>(u);
}

} // namespace

void save_checkpoint(const std::string& prefix, const Params& params, const std::string& tag) {
    const ModelConfig& c = params.config();
    json manifest;
    manifest["format_version"] = 1;
    manifest["tag"] = tag;
    manifest["dtype"] = "f32le";
    manifest["config"] = {
        {"n_layers", c.n_layers}, {"n_heads", c.n_heads},       {"d_model", c.d_model},
        {"d_ff", c.d_ff},         {"max_seq", c.max_seq},       {"vocab_size", c.vocab_size},
        {"mode", c.mode == AttnMode::causal ? "causal" : "bidirectional"},
    };
    json arrays = json::array();
    for (const ParamArray& a : params.arrays()) {
        arrays.push_back({{"name", a.name},
                          {"shape", {a.rows, a.cols}},
                          {"offset", a.offset * sizeof(float)}});
    }
    manifest["arrays"] = std::move(arrays);

    std::string blob(params.size() * sizeof(float), '\0');
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::uint32_t u = to_le(static_cast<float>(params.data()[i]));
        std::memcpy(blob.data() + i * sizeof(float), &u, sizeof(u));
    }

    write_atomic(prefix + ".bin", blob);
    write_atomic(prefix + ".json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw std::runtime_error("missing checkpoint manifest: " + prefix + ".json");
    json manifest;
    mf >> manifest;
    if (manifest.at("format_version").get<int>() != 1) {
        throw std::runtime_error("unsupported checkpoint format version");
    }

    ModelConfig c;
    const json& jc = manifest.at("config");
    c.n_layers = jc.at("n_layers").get<int>();
    c.n_heads = jc.at("n_heads").get<int>();
    c.d_model = jc.at("d_model").get<int>();
    c.d_ff = jc.at("d_ff").get<int>();
    c.max_seq = jc.at("max_seq").get<int>();
    c.vocab_size = jc.at("vocab_size").get<int>();
    c.mode = jc.at("mode").get<std::string>() == "bidirectional" ? AttnMode::bidirectional
                                                                 : AttnMode::causal;

    Checkpoint ckpt{c, Params(c), manifest.at("tag").get<std::string>()};

    const json& arrays = manifest.at("arrays");
    if (arrays.size() != ckpt.params.arrays().size()) {
        throw std::runtime_error("checkpoint manifest does not match the parameter layout");
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        const ParamArray& a = ckpt.params.arrays()[i];
        if (arrays[i].at("name").get<std::string>() != a.name ||
            arrays[i].at("offset").get<std::size_t>() != a.offset * sizeof(float)) {
            throw std::runtime_error("checkpoint array mismatch at " + a.name);
        }
    }

    std::ifstream bf(prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("missing checkpoint blob: " + prefix + ".bin");
    std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    if (blob.size() != ckpt.params.size() * sizeof(float)) {
        throw std::runtime_error("checkpoint blob size mismatch: " + prefix + ".bin");
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, blob.data() + i * sizeof(float), sizeof(u));
        ckpt.params.data()[i] = static_cast<double>(from_le(u));
    }
    return ckpt;
}

} // namespace pf
