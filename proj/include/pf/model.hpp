#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace pf {

enum class AttnMode { causal, bidirectional };

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int d_ff = 128;
    int max_seq = 128;
    int vocab_size = 0;
    AttnMode mode = AttnMode::causal;

    void validate() const; // throws std::invalid_argument
};

// One named array inside the flat parameter buffer.
struct ParamArray {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0; // 1 for vectors

    std::size_t count() const { return rows * cols; }
};

// All trainable parameters in one flat double buffer with a named-array
// registry. The output projection is tied to the token embedding table. The
// auxiliary heads (candidate classifier, 3-way NLI head, critic vector) live
// here too so one checkpoint format covers every model in the system.
class Params {
public:
    explicit Params(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const std::vector<ParamArray>& arrays() const { return arrays_; }

    std::size_t size() const { return buf_.size(); }
    double* data() { return buf_.data(); }
    const double* data() const { return buf_.data(); }

    // normal(0, 0.02) weights, zero biases, unit LayerNorm gains, zero critic
    void init_weights(std::uint64_t seed);

    bool all_finite() const;

    // named accessors (layer-indexed where applicable)
    double* tok_emb() { return at("tok_emb"); }
    const double* tok_emb() const { return at("tok_emb"); }
    double* pos_emb() { return at("pos_emb"); }
    const double* pos_emb() const { return at("pos_emb"); }
    double* layer(const char* name, int l) { return at(layer_name(name, l)); }
    const double* layer(const char* name, int l) const { return at(layer_name(name, l)); }
    double* head(const char* name) { return at(name); }
    const double* head(const char* name) const { return at(name); }

    std::size_t offset_of(const std::string& name) const;
    static std::string layer_name(const char* name, int l);

private:
    double* at(const std::string& name) { return buf_.data() + offset_of(name); }
    const double* at(const std::string& name) const { return buf_.data() + offset_of(name); }

    ModelConfig config_;
    std::vector<ParamArray> arrays_;
    std::map<std::string, std::size_t> index_;
    std::vector<double> buf_;
};

// Activation cache from one forward pass; everything backward() needs.
struct ForwardTrace {
    int T = 0;
    std::vector<int> ids;

    struct LayerCache {
        std::vector<double> ln1_out, ln1_mean, ln1_rstd;
        std::vector<double> q, k, v;   // [T, d]
        std::vector<double> att;       // [H, T, T] post-softmax
        std::vector<double> att_mix;   // [T, d] heads concatenated, pre-output-proj
        std::vector<double> x_mid;     // [T, d] after attention residual
        std::vector<double> ln2_out, ln2_mean, ln2_rstd;
        std::vector<double> fc1_pre;   // [T, d_ff]
        std::vector<double> fc1_act;   // [T, d_ff]
    };

    std::vector<std::vector<double>> x; // [L+1] buffers of [T, d]; x[0] = embeddings
    std::vector<LayerCache> layers;
    std::vector<double> lnf_mean, lnf_rstd;
    std::vector<double> hidden; // [T, d] final-layer states (post final LayerNorm)
    std::vector<double> logits; // [T, V]
};

ForwardTrace forward(const Params& params, const ModelConfig& config, std::span<const int> ids);

// Reverse pass through a trace. d_logits ([T,V]) and d_hidden ([T,d], applied
// to the post-final-LayerNorm states) may each be null. Gradients accumulate
// into grad, which must have Params::size() entries.
void backward(const Params& params, const ModelConfig& config, const ForwardTrace& trace,
              const double* d_logits, const double* d_hidden, std::vector<double>& grad);

// Language-modeling loss. target_mask[k] != 0 marks token k as a prediction
// target scored from positions before k; position 0 can never be a target.
// Loss is the mean -log p over masked tokens. grad may be null (loss only).
double nll_loss(const Params& params, const ModelConfig& config, std::span<const int> ids,
                std::span<const std::uint8_t> target_mask, std::vector<double>* grad);

// Numerically safe log-softmax of one row (max subtraction).
void log_softmax_row(const double* logits, int n, double* out);

// Temperature softmax restricted to non-banned tokens; used by the sampler
// and by the RL surrogate so both see the same distribution. Returns false
// when every token is banned.
bool blocked_softmax(const double* logits, int n, double temperature,
                     const std::vector<int>& banned, std::vector<double>& probs);

// n-gram blocking table: maps (len-1)-token prefixes to banned completions.
// Grams of mixed lengths are allowed; a 1-gram bans its token everywhere.
class NgramBlocker {
public:
    NgramBlocker() = default;
    // every n-gram of every source sequence
    NgramBlocker(const std::vector<std::vector<int>>& sources, int n);

    void add(std::span<const int> gram);
    bool empty() const { return by_prefix_.empty(); }

    // tokens banned as the next emission given the response so far
    std::vector<int> banned_tokens(std::span<const int> emitted) const;

private:
    std::map<std::vector<int>, std::set<int>> by_prefix_;
    std::set<std::size_t> prefix_lengths_;
};

struct GenerationResult {
    std::vector<int> ids;                     // EOS included when emitted
    std::vector<double> logprobs;             // of the post-blocking renormalized distribution
    std::vector<double> hidden;               // [ids.size(), d] states at each emitted token
    std::vector<std::vector<int>> banned;     // per step, sorted banned token ids
    double temperature = 1.0;
};

// Temperature sampling with n-gram blocking. Reserved tokens other than EOS
// are never emitted. If blocking removes the entire distribution the
// generator emits EOS and stops. Deterministic under rng_seed.
GenerationResult sample_response(const Params& params, const ModelConfig& config,
                                 std::span<const int> prompt_ids, int max_new, double temperature,
                                 const NgramBlocker& blocker, std::uint64_t rng_seed);

// Re-derives the per-token log-probs of a finished generation from a single
// fresh forward pass (same blocking masks and temperature).
std::vector<double> recompute_logprobs(const Params& params, const ModelConfig& config,
                                       std::span<const int> prompt_ids,
                                       const GenerationResult& gen);

// Final hidden state at the [CLS] position (bidirectional encoder).
std::vector<double> encode_cls(const Params& params, const ModelConfig& config,
                               std::span<const int> ids);

// Mean of the raw token-embedding rows (static input embeddings, not
// contextual states).
std::vector<double> mean_pool_embed(const Params& params, const ModelConfig& config,
                                    std::span<const int> ids);

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over the whole buffer. Throws on a
// non-finite gradient; verifies the updated parameters stay finite.
void adam_step(Params& params, const std::vector<double>& grad, AdamState& state, double lr);

// Checkpoint = <prefix>.json manifest + <prefix>.bin blob of little-endian
// f32 in manifest order. Writes are atomic (temp file + rename).
void save_checkpoint(const std::string& prefix, const Params& params, const std::string& tag);

struct Checkpoint {
    ModelConfig config;
    Params params;
    std::string tag;
};

Checkpoint load_checkpoint(const std::string& prefix);

} // namespace pf
