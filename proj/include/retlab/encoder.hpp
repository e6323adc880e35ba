#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "retlab/common.hpp"
#include "retlab/corpus.hpp"

namespace retlab {

/// Maps a word token to a slot in the hashed embedding table.
inline std::uint32_t hash_token(std::string_view token, int vocab_hash_size) {
    return std::uint32_t(fnv1a(token) % std::uint64_t(vocab_hash_size));
}

inline std::vector<std::uint32_t> hash_tokens(std::string_view text, int vocab_hash_size) {
    std::vector<std::uint32_t> out;
    for (const auto& t : tokenize(text)) out.push_back(hash_token(t, vocab_hash_size));
    return out;
}

struct EncoderConfig {
    int vocab_hash_size = 1 << 16;
    int embed_dim = 64;
    int hidden_dim = 128;
    int out_dim = 64;

    void validate() const {
        if (vocab_hash_size < 1 || embed_dim < 1 || hidden_dim < 1 || out_dim < 1)
            throw ConfigError("encoder dimensions must be >= 1");
    }
};

/// Shared two-tower encoder: hashed embedding lookup, mean pool over the
/// token multiset, tanh hidden layer, linear output. Queries and documents
/// go through the same parameters; relevance is the dot product of the two
/// output vectors.
///
/// Parameters are stored as float32 (the checkpoint wire type); all math is
/// done in double.
struct EncoderModel {
    EncoderConfig cfg;
    std::uint64_t seed = 0;
    std::vector<float> emb;  // V x E
    std::vector<float> w1;   // H x E
    std::vector<float> b1;   // H
    std::vector<float> w2;   // h x H
    std::vector<float> b2;   // h

    std::size_t n_params() const {
        return emb.size() + w1.size() + b1.size() + w2.size() + b2.size();
    }
};

inline EncoderModel init_model(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderModel m;
    m.cfg = cfg;
    m.seed = seed;
    m.emb.resize(std::size_t(cfg.vocab_hash_size) * std::size_t(cfg.embed_dim));
    m.w1.resize(std::size_t(cfg.hidden_dim) * std::size_t(cfg.embed_dim));
    m.b1.resize(std::size_t(cfg.hidden_dim));
    m.w2.resize(std::size_t(cfg.out_dim) * std::size_t(cfg.hidden_dim));
    m.b2.resize(std::size_t(cfg.out_dim));
    Rng rng(derive_seed(seed, fnv1a("model-init")));
    for (auto* arr : {&m.emb, &m.w1, &m.b1, &m.w2, &m.b2})
        for (auto& p : *arr) p = float(rng.uniform(-0.05, 0.05));
    return m;
}

/// Fingerprint of the parameter bytes; ties dense indexes to the model that
/// produced them.
inline std::uint64_t model_fingerprint(const EncoderModel& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* arr : {&m.emb, &m.w1, &m.b1, &m.w2, &m.b2})
        h = fnv1a_bytes(arr->data(), arr->size() * sizeof(float), h);
    return h;
}

namespace detail {

struct ForwardState {
    std::vector<std::uint32_t> sorted_tokens;  // canonical accumulation order
    std::vector<double> pooled;                // E
    std::vector<double> hidden;                // H, post-tanh
    std::vector<double> out;                   // h
};

// forward pass, keeping activations for backprop
inline ForwardState encode_forward(const EncoderModel& m, std::span<const std::uint32_t> tokens) {
    if (tokens.empty()) throw DataError("encode: empty token list");
    const auto& cfg = m.cfg;
    ForwardState st;
    st.sorted_tokens.assign(tokens.begin(), tokens.end());
    std::sort(st.sorted_tokens.begin(), st.sorted_tokens.end());
    for (auto t : st.sorted_tokens)
        if (int(t) >= cfg.vocab_hash_size)
            throw DataError("encode: token hash out of range");

    st.pooled.assign(std::size_t(cfg.embed_dim), 0.0);
    for (auto t : st.sorted_tokens) {
        const float* row = &m.emb[std::size_t(t) * std::size_t(cfg.embed_dim)];
        for (int e = 0; e < cfg.embed_dim; ++e) st.pooled[std::size_t(e)] += double(row[e]);
    }
    double inv_n = 1.0 / double(st.sorted_tokens.size());
    for (auto& v : st.pooled) v *= inv_n;

    st.hidden.assign(std::size_t(cfg.hidden_dim), 0.0);
    for (int i = 0; i < cfg.hidden_dim; ++i) {
        double a = double(m.b1[std::size_t(i)]);
        const float* row = &m.w1[std::size_t(i) * std::size_t(cfg.embed_dim)];
        for (int e = 0; e < cfg.embed_dim; ++e) a += double(row[e]) * st.pooled[std::size_t(e)];
        st.hidden[std::size_t(i)] = std::tanh(a);
    }

    st.out.assign(std::size_t(cfg.out_dim), 0.0);
    for (int o = 0; o < cfg.out_dim; ++o) {
        double a = double(m.b2[std::size_t(o)]);
        const float* row = &m.w2[std::size_t(o) * std::size_t(cfg.hidden_dim)];
        for (int i = 0; i < cfg.hidden_dim; ++i) a += double(row[i]) * st.hidden[std::size_t(i)];
        st.out[std::size_t(o)] = a;
    }
    return st;
}

}  // namespace detail

inline std::vector<float> encode(const EncoderModel& m, std::span<const std::uint32_t> tokens) {
    auto st = detail::encode_forward(m, tokens);
    std::vector<float> out(st.out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!std::isfinite(st.out[i])) throw Error("encode: non-finite output");
        out[i] = float(st.out[i]);
    }
    return out;
}

inline double score(const EncoderModel& m, std::span<const std::uint32_t> query_tokens,
                    std::span<const std::uint32_t> doc_tokens) {
    auto q = detail::encode_forward(m, query_tokens);
    auto d = detail::encode_forward(m, doc_tokens);
    double s = 0.0;
    for (std::size_t i = 0; i < q.out.size(); ++i) s += q.out[i] * d.out[i];
    return s;
}

/// One training example: a query, its positive and its sampled negatives,
/// all as token-hash sequences.
struct TrainExample {
    std::string query_id;
    std::vector<std::uint32_t> query;
    std::vector<std::uint32_t> positive;
    std::vector<std::vector<std::uint32_t>> negatives;
};

struct TrainBatch {
    std::vector<TrainExample> examples;
};

/// Gradient buffer with the same shapes as the model parameters.
struct Gradients {
    std::vector<double> emb, w1, b1, w2, b2;

    static Gradients zeros_like(const EncoderModel& m) {
        Gradients g;
        g.emb.assign(m.emb.size(), 0.0);
        g.w1.assign(m.w1.size(), 0.0);
        g.b1.assign(m.b1.size(), 0.0);
        g.w2.assign(m.w2.size(), 0.0);
        g.b2.assign(m.b2.size(), 0.0);
        return g;
    }
};

namespace detail {

// accumulate d(loss)/d(out) through the encoder into the gradient buffer
inline void encode_backward(const EncoderModel& m, const ForwardState& st,
                            std::span<const double> grad_out, Gradients& g) {
    const auto& cfg = m.cfg;
    // output layer
    std::vector<double> grad_hidden(std::size_t(cfg.hidden_dim), 0.0);
    for (int o = 0; o < cfg.out_dim; ++o) {
        double go = grad_out[std::size_t(o)];
        g.b2[std::size_t(o)] += go;
        double* wrow = &g.w2[std::size_t(o) * std::size_t(cfg.hidden_dim)];
        const float* row = &m.w2[std::size_t(o) * std::size_t(cfg.hidden_dim)];
        for (int i = 0; i < cfg.hidden_dim; ++i) {
            wrow[i] += go * st.hidden[std::size_t(i)];
            grad_hidden[std::size_t(i)] += go * double(row[i]);
        }
    }
    // tanh hidden layer
    std::vector<double> grad_pooled(std::size_t(cfg.embed_dim), 0.0);
    for (int i = 0; i < cfg.hidden_dim; ++i) {
        double h = st.hidden[std::size_t(i)];
        double ga = grad_hidden[std::size_t(i)] * (1.0 - h * h);
        g.b1[std::size_t(i)] += ga;
        double* wrow = &g.w1[std::size_t(i) * std::size_t(cfg.embed_dim)];
        const float* row = &m.w1[std::size_t(i) * std::size_t(cfg.embed_dim)];
        for (int e = 0; e < cfg.embed_dim; ++e) {
            wrow[e] += ga * st.pooled[std::size_t(e)];
            grad_pooled[std::size_t(e)] += ga * double(row[e]);
        }
    }
    // mean pool into the embedding rows (with token multiplicity)
    double inv_n = 1.0 / double(st.sorted_tokens.size());
    for (auto t : st.sorted_tokens) {
        double* row = &g.emb[std::size_t(t) * std::size_t(cfg.embed_dim)];
        for (int e = 0; e < cfg.embed_dim; ++e) row[e] += inv_n * grad_pooled[std::size_t(e)];
    }
}

}  // namespace detail

struct LossResult {
    double loss = 0.0;
    Gradients grads;
};

/// Softmax cross-entropy over {positive, negatives}, averaged over the
/// batch, with analytic backpropagation. In-batch negatives are added by the
/// trainer before this call when enabled.
inline LossResult loss_and_grad(const EncoderModel& m, const TrainBatch& batch, double tau) {
    if (tau <= 0.0) throw ConfigError("temperature must be > 0");
    if (batch.examples.empty()) throw DataError("empty training batch");
    std::size_t n_neg = batch.examples.front().negatives.size();
    for (const auto& ex : batch.examples) {
        if (ex.negatives.size() != n_neg)
            throw DataError("inconsistent negative count across batch");
        if (ex.negatives.empty()) throw DataError("training example with no negatives");
    }

    LossResult result;
    result.grads = Gradients::zeros_like(m);
    double inv_b = 1.0 / double(batch.examples.size());

    for (const auto& ex : batch.examples) {
        auto q = detail::encode_forward(m, ex.query);
        auto pos = detail::encode_forward(m, ex.positive);
        std::vector<detail::ForwardState> negs;
        negs.reserve(ex.negatives.size());
        for (const auto& d : ex.negatives) negs.push_back(detail::encode_forward(m, d));

        auto dot = [&](const detail::ForwardState& a, const detail::ForwardState& b) {
            double s = 0.0;
            for (std::size_t i = 0; i < a.out.size(); ++i) s += a.out[i] * b.out[i];
            return s;
        };

        std::vector<double> logits;  // index 0 = positive
        logits.push_back(dot(q, pos) / tau);
        for (const auto& nst : negs) logits.push_back(dot(q, nst) / tau);

        double mx = *std::max_element(logits.begin(), logits.end());
        if (!std::isfinite(mx)) throw Error("loss_and_grad: non-finite score");
        double denom = 0.0;
        for (double l : logits) denom += std::exp(l - mx);
        double log_denom = mx + std::log(denom);
        double loss_q = log_denom - logits[0];
        if (!std::isfinite(loss_q)) throw Error("loss_and_grad: non-finite loss");
        result.loss += loss_q * inv_b;

        // d loss / d logit_j = softmax_j - [j == 0]
        std::vector<double> grad_logit(logits.size());
        for (std::size_t j = 0; j < logits.size(); ++j)
            grad_logit[j] = (std::exp(logits[j] - mx) / denom - (j == 0 ? 1.0 : 0.0)) * inv_b;

        // chain to the three embedding towers
        std::vector<double> grad_q(q.out.size(), 0.0);
        auto backprop_doc = [&](const detail::ForwardState& dst, double coeff) {
            std::vector<double> grad_d(dst.out.size());
            for (std::size_t i = 0; i < dst.out.size(); ++i) {
                grad_d[i] = coeff / tau * q.out[i];
                grad_q[i] += coeff / tau * dst.out[i];
            }
            detail::encode_backward(m, dst, grad_d, result.grads);
        };
        backprop_doc(pos, grad_logit[0]);
        for (std::size_t j = 0; j < negs.size(); ++j) backprop_doc(negs[j], grad_logit[j + 1]);
        detail::encode_backward(m, q, grad_q, result.grads);
    }
    return result;
}

/// Adam optimizer state (float32 moments, mirroring the parameter layout).
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<float> m_emb, m_w1, m_b1, m_w2, m_b2;
    std::vector<float> v_emb, v_w1, v_b1, v_w2, v_b2;

    static AdamState zeros_like(const EncoderModel& model) {
        AdamState s;
        s.m_emb.assign(model.emb.size(), 0.f);
        s.m_w1.assign(model.w1.size(), 0.f);
        s.m_b1.assign(model.b1.size(), 0.f);
        s.m_w2.assign(model.w2.size(), 0.f);
        s.m_b2.assign(model.b2.size(), 0.f);
        s.v_emb = s.m_emb;
        s.v_w1 = s.m_w1;
        s.v_b1 = s.m_b1;
        s.v_w2 = s.m_w2;
        s.v_b2 = s.m_b2;
        return s;
    }
};

inline void optimizer_step(EncoderModel& model, const Gradients& grads, AdamState& state,
                           double lr) {
    if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
    auto apply = [&](std::vector<float>& theta, const std::vector<double>& g,
                     std::vector<float>& mo, std::vector<float>& vo) {
        if (theta.size() != g.size() || theta.size() != mo.size())
            throw ConfigError("optimizer_step: shape mismatch");
        double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
        double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double mi = state.beta1 * double(mo[i]) + (1.0 - state.beta1) * g[i];
            double vi = state.beta2 * double(vo[i]) + (1.0 - state.beta2) * g[i] * g[i];
            mo[i] = float(mi);
            vo[i] = float(vi);
            double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
            theta[i] = float(double(theta[i]) - update);
        }
    };
    ++state.step;
    apply(model.emb, grads.emb, state.m_emb, state.v_emb);
    apply(model.w1, grads.w1, state.m_w1, state.v_w1);
    apply(model.b1, grads.b1, state.m_b1, state.v_b1);
    apply(model.w2, grads.w2, state.m_w2, state.v_w2);
    apply(model.b2, grads.b2, state.m_b2, state.v_b2);
}

enum class LrKind { constant, linear_warmup_decay, cyclical };

/// Learning-rate schedule. The cyclical kind restarts the warmup/decay ramp
/// at each episode boundary.
struct LrSchedule {
    LrKind kind = LrKind::constant;
    double base_lr = 1e-3;
    double warmup_fraction = 0.1;
    std::uint64_t total_steps = 1;
    std::vector<std::uint64_t> episode_boundaries;  // cyclical only; segment start steps
};

inline double lr_at(const LrSchedule& sched, std::uint64_t step) {
    if (step >= sched.total_steps) throw ConfigError("lr_at: step out of range");
    if (sched.kind == LrKind::constant) return sched.base_lr;

    std::uint64_t seg_start = 0, seg_end = sched.total_steps;
    if (sched.kind == LrKind::cyclical) {
        for (auto b : sched.episode_boundaries) {
            if (b <= step)
                seg_start = std::max(seg_start, b);
            else
                seg_end = std::min(seg_end, b);
        }
    }
    std::uint64_t local = step - seg_start;
    std::uint64_t total = seg_end - seg_start;
    std::uint64_t warm = std::uint64_t(std::llround(sched.warmup_fraction * double(total)));
    if (warm > 0 && local < warm) return sched.base_lr * double(local) / double(warm);
    if (total == warm) return sched.base_lr;
    return sched.base_lr * double(total - local) / double(total - warm);
}

// ---------------------------------------------------------------------------
// checkpointing
//
// Binary layout (little endian):
//   magic "RLCK" | u32 version=1 | u32 V,E,H,h | u64 init seed
//   | f32 params: emb, w1, b1, w2, b2
//   | u64 adam step | f32 first moments (same order) | f32 second moments
// ---------------------------------------------------------------------------

namespace detail {

inline void write_raw(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void read_raw(std::ifstream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in.gcount()) != n) throw FormatError("checkpoint: truncated file");
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
    write_raw(out, &v, sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v;
    read_raw(in, &v, sizeof(T));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const EncoderModel& model, const AdamState& state,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    out.write("RLCK", 4);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint32_t>(out, std::uint32_t(model.cfg.vocab_hash_size));
    detail::write_pod<std::uint32_t>(out, std::uint32_t(model.cfg.embed_dim));
    detail::write_pod<std::uint32_t>(out, std::uint32_t(model.cfg.hidden_dim));
    detail::write_pod<std::uint32_t>(out, std::uint32_t(model.cfg.out_dim));
    detail::write_pod<std::uint64_t>(out, model.seed);
    for (const auto* arr : {&model.emb, &model.w1, &model.b1, &model.w2, &model.b2})
        detail::write_raw(out, arr->data(), arr->size() * sizeof(float));
    detail::write_pod<std::uint64_t>(out, state.step);
    for (const auto* arr : {&state.m_emb, &state.m_w1, &state.m_b1, &state.m_w2, &state.m_b2})
        detail::write_raw(out, arr->data(), arr->size() * sizeof(float));
    for (const auto* arr : {&state.v_emb, &state.v_w1, &state.v_b1, &state.v_w2, &state.v_b2})
        detail::write_raw(out, arr->data(), arr->size() * sizeof(float));
    if (!out) throw FormatError("checkpoint: write failed: " + path);
}

inline std::pair<EncoderModel, AdamState> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    char magic[4];
    detail::read_raw(in, magic, 4);
    if (std::memcmp(magic, "RLCK", 4) != 0)
        throw FormatError("not a checkpoint file: " + path);
    auto version = detail::read_pod<std::uint32_t>(in);
    if (version != 1) throw FormatError("unsupported checkpoint version in " + path);
    EncoderConfig cfg;
    cfg.vocab_hash_size = int(detail::read_pod<std::uint32_t>(in));
    cfg.embed_dim = int(detail::read_pod<std::uint32_t>(in));
    cfg.hidden_dim = int(detail::read_pod<std::uint32_t>(in));
    cfg.out_dim = int(detail::read_pod<std::uint32_t>(in));
    cfg.validate();
    auto seed = detail::read_pod<std::uint64_t>(in);
    EncoderModel model = init_model(cfg, seed);
    for (auto* arr : {&model.emb, &model.w1, &model.b1, &model.w2, &model.b2})
        detail::read_raw(in, arr->data(), arr->size() * sizeof(float));
    AdamState state = AdamState::zeros_like(model);
    state.step = detail::read_pod<std::uint64_t>(in);
    for (auto* arr : {&state.m_emb, &state.m_w1, &state.m_b1, &state.m_w2, &state.m_b2})
        detail::read_raw(in, arr->data(), arr->size() * sizeof(float));
    for (auto* arr : {&state.v_emb, &state.v_w1, &state.v_b1, &state.v_w2, &state.v_b2})
        detail::read_raw(in, arr->data(), arr->size() * sizeof(float));
    return {std::move(model), std::move(state)};
}

}  // namespace retlab
