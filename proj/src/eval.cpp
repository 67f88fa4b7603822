#include "pf/eval.hpp"

#include "pf/reward.hpp"
#include "pf/rng.hpp"
#include "pf/runio.hpp"
#include "pf/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace pf {

using json = nlohmann::json;

double perplexity_policy(const Params& policy, const ModelConfig& config, const Vocab& vocab,
                         const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("perplexity_policy: empty sample list");
    double total_nll = 0.0;
    long total_tokens = 0;
    for (const Sample& s : samples) {
        const TrainSeq seq = build_training_sequence(s, s.reference, vocab, config.max_seq);
        long n = 0;
        for (std::uint8_t m : seq.mask) n += m;
        total_nll += nll_loss(policy, config, seq.ids, seq.mask, nullptr) * static_cast<double>(n);
        total_tokens += n;
    }
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

double perplexity_lm(const Params& lm, const ModelConfig& config, const Vocab& vocab,
                     const std::vector<std::string>& texts) {
    if (texts.empty()) throw std::invalid_argument("perplexity_lm: empty text list");
    double total_nll = 0.0;
    long total_tokens = 0;
    for (const std::string& text : texts) {
        const std::vector<int> tokens = tokenize(text, vocab);
        if (tokens.empty()) continue;
        std::vector<int> ids;
        ids.push_back(Vocab::kBos);
        ids.insert(ids.end(), tokens.begin(), tokens.end());
        ids.push_back(Vocab::kEos);
        if (static_cast<int>(ids.size()) > config.max_seq) ids.resize(static_cast<std::size_t>(config.max_seq));
        std::vector<std::uint8_t> mask(ids.size(), 1);
        mask[0] = 0;
        long n = static_cast<long>(ids.size()) - 1;
        total_nll += nll_loss(lm, config, ids, mask, nullptr) * static_cast<double>(n);
        total_tokens += n;
    }
    if (total_tokens == 0) throw std::invalid_argument("perplexity_lm: no scorable tokens");
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

double token_f1(const std::string& hypothesis, const std::string& reference) {
    const std::vector<std::string> hyp = split_words(hypothesis);
    const std::vector<std::string> ref = split_words(reference);
    if (hyp.empty() && ref.empty()) return 100.0;
    if (hyp.empty() || ref.empty()) return 0.0;

    std::map<std::string, int> ref_counts;
    for (const std::string& w : ref) ++ref_counts[w];
    int overlap = 0;
    for (const std::string& w : hyp) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(hyp.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& words, int n) {
    std::map<std::vector<std::string>, int> counts;
    if (static_cast<int>(words.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
        ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                          words.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    }
    return counts;
}

} // namespace

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
    if (hypotheses.size() != references.size()) {
        throw std::invalid_argument("corpus_bleu: hypothesis/reference count mismatch");
    }
    if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

    long hyp_len = 0, ref_len = 0;
    long matches[4] = {}, totals[4] = {};
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const std::vector<std::string> hyp = split_words(hypotheses[i]);
        const std::vector<std::string> ref = split_words(references[i]);
        hyp_len += static_cast<long>(hyp.size());
        ref_len += static_cast<long>(ref.size());
        for (int n = 1; n <= 4; ++n) {
            const auto hc = ngram_counts(hyp, n);
            const auto rc = ngram_counts(ref, n);
            for (const auto& [gram, count] : hc) {
                totals[n - 1] += count;
                auto it = rc.find(gram);
                if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
            }
        }
    }
    if (hyp_len == 0) return 0.0;

    double log_p = 0.0;
    for (int n = 0; n < 4; ++n) {
        double p;
        if (matches[n] > 0) {
            p = static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
        } else {
            p = (static_cast<double>(matches[n]) + 1.0) / (static_cast<double>(totals[n]) + 1.0);
        }
        log_p += 0.25 * std::log(p);
    }
    const double bp =
        hyp_len >= ref_len ? 1.0
                           : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return bp * std::exp(log_p);
}

const char* consistency_label_name(ConsistencyLabel l) {
    switch (l) {
        case ConsistencyLabel::consistent: return "consistent";
        case ConsistencyLabel::neutral: return "neutral";
        case ConsistencyLabel::contradicting: return "contradicting";
    }
    return "neutral";
}

double pc_from_frequencies(double freq_entailment, double freq_contradiction) {
    return 100.0 * (freq_entailment - freq_contradiction);
}

double pc_from_counts(long n_entailment, long n_contradiction, long n_pairs) {
    if (n_pairs <= 0) throw std::invalid_argument("pc_from_counts: no pairs");
    return 100.0 * static_cast<double>(n_entailment - n_contradiction) /
           static_cast<double>(n_pairs);
}

double pc_of_labels(std::span<const NliLabel> labels) {
    long ne = 0, nc = 0;
    for (NliLabel l : labels) {
        if (l == NliLabel::entailment) ++ne;
        if (l == NliLabel::contradiction) ++nc;
    }
    return pc_from_counts(ne, nc, static_cast<long>(labels.size()));
}

PcResult pc_metric(const NliJudge& judge, const Vocab& vocab,
                   const std::vector<std::pair<Persona, std::string>>& personas_and_responses) {
    PcResult out;
    for (const auto& [persona, response] : personas_and_responses) {
        bool any_e = false, any_c = false;
        for (const Fact& f : persona.facts) {
            const NliProbs p = score_nli(judge, f.surface, response, vocab);
            // argmax with ties resolved contradiction > entailment > neutral
            NliLabel label = NliLabel::contradiction;
            double best = p.p_c;
            if (p.p_e > best) {
                best = p.p_e;
                label = NliLabel::entailment;
            }
            if (p.p_n > best) label = NliLabel::neutral;
            out.pair_labels.push_back(label);
            ++out.n_pairs;
            if (label == NliLabel::entailment) {
                ++out.n_entailment;
                any_e = true;
            } else if (label == NliLabel::contradiction) {
                ++out.n_contradiction;
                any_c = true;
            }
        }
        out.response_labels.push_back(any_c ? ConsistencyLabel::contradicting
                                            : any_e ? ConsistencyLabel::consistent
                                                    : ConsistencyLabel::neutral);
    }
    if (out.n_pairs == 0) throw std::invalid_argument("pc_metric: no (fact, response) pairs");
    out.pc = pc_from_counts(out.n_entailment, out.n_contradiction, out.n_pairs);
    out.freq_entailment = 100.0 * static_cast<double>(out.n_entailment) / static_cast<double>(out.n_pairs);
    out.freq_contradiction =
        100.0 * static_cast<double>(out.n_contradiction) / static_cast<double>(out.n_pairs);
    out.freq_neutral = 100.0 - out.freq_entailment - out.freq_contradiction;
    return out;
}

double repetition_rate(const std::vector<std::vector<int>>& responses) {
    if (responses.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : responses) total += 1.0 - r4_repetition(r);
    return 100.0 * total / static_cast<double>(responses.size());
}

ConfusionMatrix confusion_matrix(std::span<const ConsistencyLabel> system_a,
                                 std::span<const ConsistencyLabel> system_b) {
    if (system_a.size() != system_b.size()) {
        throw std::invalid_argument("confusion_matrix: label lists must have equal length");
    }
    long counts[3][3] = {};
    for (std::size_t i = 0; i < system_a.size(); ++i) {
        ++counts[static_cast<int>(system_a[i])][static_cast<int>(system_b[i])];
    }
    ConfusionMatrix out;
    for (int r = 0; r < 3; ++r) {
        long row_total = counts[r][0] + counts[r][1] + counts[r][2];
        out.row_defined[r] = row_total > 0;
        for (int c = 0; c < 3; ++c) {
            out.rows[r][c] = out.row_defined[r]
                                 ? 100.0 * static_cast<double>(counts[r][c]) / static_cast<double>(row_total)
                                 : 0.0;
        }
    }
    return out;
}

std::string EvalReport::to_json() const {
    json j;
    j["ppl"] = ppl;
    j["f1"] = f1;
    j["bleu"] = bleu;
    j["pc"] = pc;
    j["freq_consistent"] = freq_consistent;
    j["freq_neutral"] = freq_neutral;
    j["freq_contradicting"] = freq_contradicting;
    j["repetition_pct"] = repetition_pct;
    j["rollup_consistent_pct"] = rollup_consistent_pct;
    j["rollup_neutral_pct"] = rollup_neutral_pct;
    j["rollup_contradicting_pct"] = rollup_contradicting_pct;
    j["n_samples"] = n_samples;
    j["n_pairs"] = n_pairs;
    return j.dump(2) + "\n";
}

std::string EvalReport::csv_header() {
    return "ppl,f1,bleu,pc,freq_consistent,freq_neutral,freq_contradicting,repetition_pct,"
           "rollup_consistent_pct,rollup_neutral_pct,rollup_contradicting_pct,n_samples,n_pairs\n";
}

std::string EvalReport::to_csv_row() const {
    return csv_join({format_double(ppl), format_double(f1), format_double(bleu), format_double(pc),
                     format_double(freq_consistent), format_double(freq_neutral),
                     format_double(freq_contradicting), format_double(repetition_pct),
                     format_double(rollup_consistent_pct), format_double(rollup_neutral_pct),
                     format_double(rollup_contradicting_pct), std::to_string(n_samples),
                     std::to_string(n_pairs)});
}

FullReportOutput full_report(const Params& policy, const ModelConfig& policy_config,
                             const NliJudge& judge, const Params& lm, const ModelConfig& lm_config,
                             const std::vector<Sample>& eval_samples, const Vocab& vocab,
                             std::uint64_t gen_seed, int max_response, int ngram_block,
                             double temperature, int threads) {
    if (eval_samples.empty()) throw std::invalid_argument("full_report: empty sample list");

    FullReportOutput out;
    out.generated.resize(eval_samples.size());
    std::vector<std::vector<int>> generated_tokens(eval_samples.size());

    parallel_for(eval_samples.size(), threads, [&](std::size_t i) {
        const Sample& s = eval_samples[i];
        const std::vector<int> prompt = build_prompt(s, vocab, policy_config.max_seq, max_response);
        const NgramBlocker blocker = blocker_for_sample(s, vocab, ngram_block);
        const GenerationResult gen =
            sample_response(policy, policy_config, prompt, max_response, temperature, blocker,
                            derive_seed(gen_seed, 0xe7a1, i));
        std::vector<int> content = gen.ids;
        if (!content.empty() && content.back() == Vocab::kEos) content.pop_back();
        out.generated[i] = detokenize(content, vocab);
        generated_tokens[i] = std::move(content);
    });

    std::vector<std::pair<Persona, std::string>> pairs;
    std::vector<std::string> references;
    double f1_sum = 0.0;
    for (std::size_t i = 0; i < eval_samples.size(); ++i) {
        pairs.emplace_back(eval_samples[i].persona, out.generated[i]);
        references.push_back(eval_samples[i].reference);
        f1_sum += token_f1(out.generated[i], eval_samples[i].reference);
    }

    const PcResult pc = pc_metric(judge, vocab, pairs);
    out.pair_labels = pc.pair_labels;
    out.response_labels = pc.response_labels;

    EvalReport& r = out.report;
    r.ppl = perplexity_policy(policy, policy_config, vocab, eval_samples);
    r.f1 = f1_sum / static_cast<double>(eval_samples.size());
    r.bleu = corpus_bleu(out.generated, references);
    r.pc = pc.pc;
    r.freq_consistent = pc.freq_entailment;
    r.freq_contradicting = pc.freq_contradiction;
    r.freq_neutral = pc.freq_neutral;
    r.repetition_pct = repetition_rate(generated_tokens);
    long rollup[3] = {};
    for (ConsistencyLabel l : pc.response_labels) ++rollup[static_cast<int>(l)];
    const double n = static_cast<double>(pc.response_labels.size());
    r.rollup_consistent_pct = 100.0 * static_cast<double>(rollup[0]) / n;
    r.rollup_neutral_pct = 100.0 * static_cast<double>(rollup[1]) / n;
    r.rollup_contradicting_pct = 100.0 * static_cast<double>(rollup[2]) / n;
    r.n_samples = static_cast<long>(eval_samples.size());
    r.n_pairs = pc.n_pairs;
    (void)lm;
    (void)lm_config;

    std::string dump = "sample_id,fact_idx,label\n";
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < eval_samples.size(); ++i) {
        for (std::size_t f = 0; f < eval_samples[i].persona.facts.size(); ++f) {
            dump += csv_join({std::to_string(i), std::to_string(f),
                              nli_label_name(pc.pair_labels[cursor++])});
        }
    }
    out.label_dump_csv = std::move(dump);
    return out;
}

double mean_plausibility(std::span<const int> ratings) {
    if (ratings.empty()) throw std::invalid_argument("mean_plausibility: empty ratings");
    double sum = 0.0;
    for (int r : ratings) {
        if (r < 1 || r > 5) throw std::invalid_argument("mean_plausibility: ratings must be 1-5");
        sum += r;
    }
    return sum / static_cast<double>(ratings.size());
}

} // namespace pf
