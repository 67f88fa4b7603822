#include "pf/nli.hpp"

#include "pf/kernels.hpp"
#include "pf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pf {

namespace {

int label_index(NliLabel l) {
    switch (l) {
        case NliLabel::entailment: return 0;
        case NliLabel::contradiction: return 1;
        case NliLabel::neutral: return 2;
    }
    return 2;
}

// scores = nli_w * h_cls + nli_b; probs = softmax(scores)
void head_scores(const Params& params, const double* h_cls, double* scores) {
    const int d = params.config().d_model;
    const double* w = params.head("nli_w");
    const double* b = params.head("nli_b");
    for (int c = 0; c < 3; ++c) {
        scores[c] = active_kernels().dot(w + static_cast<std::size_t>(c) * d, h_cls,
                                         static_cast<std::size_t>(d)) +
                    b[c];
    }
}

} // namespace

std::vector<int> nli_input_ids(const std::string& fact_text, const std::string& response_text,
                               const Vocab& vocab, int max_seq) {
    std::vector<int> ids;
    ids.push_back(Vocab::kCls);
    for (int id : tokenize(fact_text, vocab)) ids.push_back(id);
    ids.push_back(Vocab::kSep);
    for (int id : tokenize(response_text, vocab)) ids.push_back(id);
    if (static_cast<int>(ids.size()) > max_seq) ids.resize(static_cast<std::size_t>(max_seq));
    return ids;
}

NliProbs score_nli(const NliJudge& judge, const std::string& fact_text,
                   const std::string& response_text, const Vocab& vocab) {
    const std::vector<int> ids =
        nli_input_ids(fact_text, response_text, vocab, judge.config.max_seq);
    const std::vector<double> h = encode_cls(judge.params, judge.config, ids);
    double scores[3];
    head_scores(judge.params, h.data(), scores);
    double logp[3];
    log_softmax_row(scores, 3, logp);
    return {std::exp(logp[0]), std::exp(logp[1]), std::exp(logp[2])};
}

double nli_example_loss(const Params& params, const ModelConfig& config,
                        std::span<const int> ids, NliLabel label, std::vector<double>* grad) {
    if (ids.empty() || ids[0] != Vocab::kCls) {
        throw std::invalid_argument("nli_example_loss: input must begin with CLS");
    }
    const ForwardTrace tr = forward(params, config, ids);
    const int d = config.d_model;
    double scores[3];
    head_scores(params, tr.hidden.data(), scores);
    double logp[3];
    log_softmax_row(scores, 3, logp);
    const int gold = label_index(label);
    const double loss = -logp[gold];

    if (grad != nullptr) {
        double dscores[3];
        for (int c = 0; c < 3; ++c) dscores[c] = std::exp(logp[c]);
        dscores[gold] -= 1.0;

        double* g_w = grad->data() + params.offset_of("nli_w");
        double* g_b = grad->data() + params.offset_of("nli_b");
        std::vector<double> d_hidden(tr.hidden.size(), 0.0);
        const double* w = params.head("nli_w");
        for (int c = 0; c < 3; ++c) {
            active_kernels().axpy(dscores[c], tr.hidden.data(), g_w + static_cast<std::size_t>(c) * d,
                                  static_cast<std::size_t>(d));
            g_b[c] += dscores[c];
            active_kernels().axpy(dscores[c], w + static_cast<std::size_t>(c) * d, d_hidden.data(),
                                  static_cast<std::size_t>(d));
        }
        backward(params, config, tr, nullptr, d_hidden.data(), *grad);
    }
    return loss;
}

NliJudge train_nli(const std::vector<NliExample>& examples, const ModelConfig& config,
                   const NliHyper& hyper, const Vocab& vocab, NliReport* report) {
    if (config.mode != AttnMode::bidirectional) {
        throw std::invalid_argument("train_nli: judge config must be bidirectional");
    }
    long class_counts[3] = {};
    for (const NliExample& e : examples) ++class_counts[label_index(e.label)];
    for (long c : class_counts) {
        if (c == 0) {
            throw std::invalid_argument(
                "train_nli: degenerate data; all three NLI classes must be present");
        }
    }

    Rng rng(hyper.seed);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const std::size_t n_heldout = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(examples.size()) * hyper.heldout_fraction));
    if (n_heldout >= examples.size()) {
        throw std::invalid_argument("train_nli: not enough examples for a held-out split");
    }
    std::vector<NliExample> heldout, train;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_heldout ? heldout : train).push_back(examples[order[i]]);
    }

    NliJudge judge(config, Params(config));
    judge.params.init_weights(mix_seed(hyper.seed));

    // token id cache; NLI inputs are short and reused every epoch
    std::vector<std::vector<int>> train_ids(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        train_ids[i] = nli_input_ids(train[i].premise, train[i].hypothesis, vocab, config.max_seq);
    }

    AdamState opt;
    std::vector<double> grad(judge.params.size(), 0.0);
    std::vector<std::size_t> idx(train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    if (report != nullptr) {
        report->n_train = static_cast<long>(train.size());
        report->n_heldout = static_cast<long>(heldout.size());
    }

    const long updates_per_epoch =
        static_cast<long>((train.size() + static_cast<std::size_t>(hyper.batch) - 1) /
                          static_cast<std::size_t>(hyper.batch));
    const long warmup_updates = std::max<long>(
        1, static_cast<long>(hyper.warmup_frac * static_cast<double>(updates_per_epoch) *
                             static_cast<double>(hyper.epochs)));
    long update = 0;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(idx);
        double epoch_loss = 0.0;
        std::size_t cursor = 0;
        while (cursor < idx.size()) {
            const std::size_t batch_end =
                std::min(idx.size(), cursor + static_cast<std::size_t>(hyper.batch));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = cursor; i < batch_end; ++i) {
                epoch_loss += nli_example_loss(judge.params, config, train_ids[idx[i]],
                                               train[idx[i]].label, &grad);
            }
            active_kernels().scal(1.0 / static_cast<double>(batch_end - cursor), grad.data(),
                                  grad.size());
            ++update;
            const double warm = std::min(1.0, static_cast<double>(update) /
                                                  static_cast<double>(warmup_updates));
            adam_step(judge.params, grad, opt, hyper.lr * warm);
            cursor = batch_end;
        }
        if (report != nullptr) {
            report->epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
        }
    }

    if (report != nullptr) {
        long correct = 0;
        for (const NliExample& e : heldout) {
            const NliProbs p = score_nli(judge, e.premise, e.hypothesis, vocab);
            const double probs[3] = {p.p_e, p.p_c, p.p_n};
            // contradiction > entailment > neutral on exact ties
            int pred = 1;
            if (probs[0] > probs[1]) pred = 0;
            if (probs[2] > probs[pred]) pred = 2;
            ++report->confusion[label_index(e.label)][pred];
            if (pred == label_index(e.label)) ++correct;
        }
        report->heldout_accuracy =
            heldout.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(heldout.size());
    }
    return judge;
}

double heldout_accuracy(const NliJudge& judge, std::span<const NliExample> examples,
                        const Vocab& vocab) {
    if (examples.empty()) throw std::invalid_argument("heldout_accuracy: empty example list");
    long correct = 0;
    for (const NliExample& e : examples) {
        const NliProbs p = score_nli(judge, e.premise, e.hypothesis, vocab);
        const double probs[3] = {p.p_e, p.p_c, p.p_n};
        int pred = 1;
        if (probs[0] > probs[1]) pred = 0;
        if (probs[2] > probs[pred]) pred = 2;
        if (pred == label_index(e.label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double r1_consistency(const NliJudgeFn& judge_fn, const Persona& persona,
                      const std::string& response_text, double beta) {
    if (persona.facts.empty()) throw std::invalid_argument("r1_consistency: empty persona");
    if (beta < 1.0) throw std::invalid_argument("r1_consistency: beta must be >= 1");
    double sum_e = 0.0, sum_c = 0.0;
    for (const Fact& f : persona.facts) {
        const NliProbs p = judge_fn(f.surface, response_text);
        sum_e += p.p_e;
        sum_c += p.p_c;
    }
    const double n = static_cast<double>(persona.facts.size());
    return sum_e / n - beta * sum_c / n;
}

double r1_consistency(const NliJudge& judge, const Vocab& vocab, const Persona& persona,
                      const std::string& response_text, double beta) {
    return r1_consistency(
        [&](const std::string& fact, const std::string& resp) {
            return score_nli(judge, fact, resp, vocab);
        },
        persona, response_text, beta);
}

} // namespace pf
