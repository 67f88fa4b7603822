#pragma once

#include "pf/corpus.hpp"
#include "pf/model.hpp"
#include "pf/nli.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pf {

// Corpus-level perplexity of reference responses under the policy
// (conditioned on the full prompt layout).
double perplexity_policy(const Params& policy, const ModelConfig& config, const Vocab& vocab,
                         const std::vector<Sample>& samples);

// Perplexity of standalone texts under the fluency LM (BOS conditioning).
double perplexity_lm(const Params& lm, const ModelConfig& config, const Vocab& vocab,
                     const std::vector<std::string>& texts);

// Token-level F1 as a percent; multiset-clipped matching on normalized
// tokens. Empty vs empty scores 100, empty vs non-empty 0.
double token_f1(const std::string& hypothesis, const std::string& reference);

// Corpus BLEU-4 with brevity penalty; n-gram orders with zero matches get
// add-one smoothing.
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);

// Response-level consistency roll-up: contradicting if any fact contradicts,
// else consistent if any fact entails, else neutral.
enum class ConsistencyLabel { consistent, neutral, contradicting };
const char* consistency_label_name(ConsistencyLabel l);

struct PcResult {
    double pc = 0.0;
    double freq_entailment = 0.0;    // percent of (fact, response) pairs
    double freq_contradiction = 0.0;
    double freq_neutral = 0.0;
    long n_pairs = 0;
    long n_entailment = 0;
    long n_contradiction = 0;
    std::vector<NliLabel> pair_labels;              // flattened per (response, fact)
    std::vector<ConsistencyLabel> response_labels;  // roll-up per response
};

// PC over every (fact, response) pair; argmax ties resolve
// contradiction > entailment > neutral.
PcResult pc_metric(const NliJudge& judge, const Vocab& vocab,
                   const std::vector<std::pair<Persona, std::string>>& personas_and_responses);

// The PC arithmetic on its own: frequencies are fractions in [0, 1].
double pc_from_frequencies(double freq_entailment, double freq_contradiction);
double pc_from_counts(long n_entailment, long n_contradiction, long n_pairs);

// Same arithmetic applied to arbitrary label lists (property tests).
double pc_of_labels(std::span<const NliLabel> labels);

// Mean percent of consecutive-repeat tokens over the responses.
double repetition_rate(const std::vector<std::vector<int>>& responses);

struct ConfusionMatrix {
    double rows[3][3] = {};      // row-normalized percents, order consistent/neutral/contradicting
    bool row_defined[3] = {};    // false when system A never produced that label
};
ConfusionMatrix confusion_matrix(std::span<const ConsistencyLabel> system_a,
                                 std::span<const ConsistencyLabel> system_b);

struct EvalReport {
    double ppl = 0.0;
    double f1 = 0.0;   // percent, mean over samples
    double bleu = 0.0; // [0, 1]
    double pc = 0.0;
    double freq_consistent = 0.0; // pair-level percents; identity pc = e - c
    double freq_neutral = 0.0;
    double freq_contradicting = 0.0;
    double repetition_pct = 0.0;
    double rollup_consistent_pct = 0.0; // response-level roll-up
    double rollup_neutral_pct = 0.0;
    double rollup_contradicting_pct = 0.0;
    long n_samples = 0;
    long n_pairs = 0;

    std::string to_json() const;
    static std::string csv_header();
    std::string to_csv_row() const;
};

struct FullReportOutput {
    EvalReport report;
    std::vector<std::string> generated;            // one response per sample
    std::vector<ConsistencyLabel> response_labels;
    std::vector<NliLabel> pair_labels;
    std::string label_dump_csv; // sample_id,fact_idx,label
};

// Generates one response per sample (fixed seed schedule, n-gram blocking,
// capped length) and computes every metric. Generation fans out over the
// thread budget; the per-sample seed schedule keeps results identical for
// any worker count.
FullReportOutput full_report(const Params& policy, const ModelConfig& policy_config,
                             const NliJudge& judge, const Params& lm, const ModelConfig& lm_config,
                             const std::vector<Sample>& eval_samples, const Vocab& vocab,
                             std::uint64_t gen_seed, int max_response, int ngram_block,
                             double temperature, int threads);

// Aggregation helper for 1-5 plausibility ratings.
double mean_plausibility(std::span<const int> ratings);

} // namespace pf
