#pragma once

#include "pf/corpus.hpp"
#include "pf/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pf {

struct NliProbs {
    double p_e = 0.0;
    double p_c = 0.0;
    double p_n = 1.0;
};

// The trained 3-way judge: bidirectional encoder + linear head, scoring
// [CLS] fact [SEP] response.
struct NliJudge {
    ModelConfig config;
    Params params;

    NliJudge(const ModelConfig& c, Params p) : config(c), params(std::move(p)) {}
};

std::vector<int> nli_input_ids(const std::string& fact_text, const std::string& response_text,
                               const Vocab& vocab, int max_seq);

NliProbs score_nli(const NliJudge& judge, const std::string& fact_text,
                   const std::string& response_text, const Vocab& vocab);

// Cross-entropy of one formatted example; grad may be null. Exposed for the
// finite-difference suite.
double nli_example_loss(const Params& params, const ModelConfig& config,
                        std::span<const int> ids, NliLabel label, std::vector<double>* grad);

struct NliHyper {
    double lr = 1e-3;
    int batch = 16;
    int epochs = 30;
    std::uint64_t seed = 0;
    double heldout_fraction = 0.1;
    // linear learning-rate warmup over this fraction of all updates
    double warmup_frac = 0.05;
};

struct NliReport {
    double heldout_accuracy = 0.0;
    long confusion[3][3] = {}; // rows oracle label, cols predicted
    std::vector<double> epoch_losses;
    long n_train = 0;
    long n_heldout = 0;
};

// Trains the judge from scratch. Requires all three classes present and
// carves a held-out slice before training.
NliJudge train_nli(const std::vector<NliExample>& examples, const ModelConfig& config,
                   const NliHyper& hyper, const Vocab& vocab, NliReport* report);

double heldout_accuracy(const NliJudge& judge, std::span<const NliExample> examples,
                        const Vocab& vocab);

// Persona-consistency sub-reward:
//   mean entailment probability minus beta times mean contradiction
//   probability over the persona facts; range [-beta, 1].
// The judge_fn overload is the injection point for property tests.
using NliJudgeFn = std::function<NliProbs(const std::string& fact_text, const std::string& response_text)>;

double r1_consistency(const NliJudgeFn& judge_fn, const Persona& persona,
                      const std::string& response_text, double beta);
double r1_consistency(const NliJudge& judge, const Vocab& vocab, const Persona& persona,
                      const std::string& response_text, double beta);

} // namespace pf
