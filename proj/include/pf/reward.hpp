#pragma once

#include "pf/corpus.hpp"
#include "pf/model.hpp"
#include "pf/nli.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pf {

// Sub-reward mixing weights. Strict validation enforces the unit simplex;
// the all-zero ablation row is additionally accepted everywhere it can be
// run, and grid-search candidates may carry sub-unit sums (several shipped
// grid rows do).
struct RewardWeights {
    double g1 = 0.40;
    double g2 = 0.16;
    double g3 = 0.22;
    double g4 = 0.22;

    bool is_zero_row() const { return g1 == 0.0 && g2 == 0.0 && g3 == 0.0 && g4 == 0.0; }
    void validate(bool allow_subunit = false) const; // throws std::invalid_argument
    static RewardWeights defaults() { return {}; }
};

struct RewardBreakdown {
    double r1 = 0.0;
    double r2 = 0.0;
    double r3 = 0.0;
    double r4 = 0.0;
    double total = 0.0;
};

// Cosine of mean-pooled static embeddings of the response and the last
// utterance only. Zero-norm vectors give 0.
double r2_coherence(const Params& embedder, const ModelConfig& config, const Vocab& vocab,
                    const std::string& response_text, const std::string& last_utterance_text);

// Mean per-token negative log-likelihood of the response under the fluency
// LM, conditioned on BOS only.
double response_nll(const Params& lm, const ModelConfig& config, const Vocab& vocab,
                    const std::string& response_text);

// (alpha - min(NLL, alpha)) / alpha, in [0, 1].
double r3_from_nll(double nll, double alpha);
double r3_fluency(const Params& lm, const ModelConfig& config, const Vocab& vocab,
                  const std::string& response_text, double alpha);

// One consecutive-run repeat per position whose token equals its predecessor;
// empty input scores 1.
double r4_repetition(std::span<const int> response_tokens);

RewardBreakdown compose_reward(const RewardWeights& weights, double r1, double r2, double r3,
                               double r4, bool allow_subunit = false);

struct AlphaCalibration {
    int max_response = 20;
    double temperature = 1.0;
    int ngram_block = 3;
    std::uint64_t seed = 0;
};

// Max per-token NLL the fluency LM assigns to responses the SL policy
// generates on the dev set.
double calibrate_alpha(const Params& lm, const ModelConfig& lm_config, const Params& sl_policy,
                       const ModelConfig& policy_config, const std::vector<Sample>& dev_samples,
                       const Vocab& vocab, const AlphaCalibration& cal);

// Immutable scorer bundle for one RL run: judge, fluency LM, frozen embedder
// snapshot, weights and the two shaping constants.
struct RewardStack {
    const NliJudge* judge = nullptr;
    const Params* lm = nullptr;
    const ModelConfig* lm_config = nullptr;
    const Params* embedder = nullptr;
    const ModelConfig* embedder_config = nullptr;
    const Vocab* vocab = nullptr;
    RewardWeights weights;
    double beta = 2.0;
    double alpha = 4.0;
    bool allow_subunit_weights = false;

    void validate() const;
    // response_tokens are the content tokens (EOS stripped)
    RewardBreakdown score(const Sample& sample, const std::string& response_text,
                          std::span<const int> response_tokens) const;
};

struct GridRow {
    RewardWeights weights;
    double f1 = 0.0;
    double ppl = 0.0;
    double repetition_pct = 0.0;
    double consistent_pct = 0.0;
    double neutral_pct = 0.0;
    double contradiction_pct = 0.0;
    double pc = 0.0;
};

// One RL run + validation per candidate; the callback fills every metric
// column. Rows come back sorted by F1 descending.
using GridRunFn = std::function<GridRow(const RewardWeights& weights, std::size_t index)>;
std::vector<GridRow> grid_search_weights(const std::vector<RewardWeights>& candidates,
                                         const GridRunFn& run_fn, int threads);

// The stock candidate list, winning row and ablation rows included.
const std::vector<RewardWeights>& default_weight_grid();

std::string grid_csv_header();
std::string grid_csv_row(const GridRow& row);

} // namespace pf
