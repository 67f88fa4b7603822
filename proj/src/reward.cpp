#include "pf/reward.hpp"

#include "pf/kernels.hpp"
#include "pf/rng.hpp"
#include "pf/runio.hpp"
#include "pf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pf {

void RewardWeights::validate(bool allow_subunit) const {
    for (double g : {g1, g2, g3, g4}) {
        if (!(g >= 0.0)) throw std::invalid_argument("reward weights must be non-negative");
    }
    if (is_zero_row()) return; // ablation row, runnable
    const double sum = g1 + g2 + g3 + g4;
    if (std::abs(sum - 1.0) <= 1e-9) return;
    if (allow_subunit && sum < 1.0) return;
    throw std::invalid_argument("reward weights must sum to 1");
}

double r2_coherence(const Params& embedder, const ModelConfig& config, const Vocab& vocab,
                    const std::string& response_text, const std::string& last_utterance_text) {
    const std::vector<int> r_ids = tokenize(response_text, vocab);
    const std::vector<int> u_ids = tokenize(last_utterance_text, vocab);
    if (r_ids.empty() || u_ids.empty()) {
        throw std::invalid_argument("r2_coherence: both texts must be non-empty");
    }
    const std::vector<double> r = mean_pool_embed(embedder, config, r_ids);
    const std::vector<double> u = mean_pool_embed(embedder, config, u_ids);
    const Kernels& K = active_kernels();
    const double rr = K.dot(r.data(), r.data(), r.size());
    const double uu = K.dot(u.data(), u.data(), u.size());
    if (rr <= 0.0 || uu <= 0.0) return 0.0;
    return K.dot(r.data(), u.data(), r.size()) / (std::sqrt(rr) * std::sqrt(uu));
}

double response_nll(const Params& lm, const ModelConfig& config, const Vocab& vocab,
                    const std::string& response_text) {
    const std::vector<int> tokens = tokenize(response_text, vocab);
    if (tokens.empty()) throw std::invalid_argument("response_nll: empty response");
    std::vector<int> ids;
    ids.push_back(Vocab::kBos);
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    if (static_cast<int>(ids.size()) > config.max_seq) ids.resize(static_cast<std::size_t>(config.max_seq));
    std::vector<std::uint8_t> mask(ids.size(), 1);
    mask[0] = 0;
    return nll_loss(lm, config, ids, mask, nullptr);
}

double r3_from_nll(double nll, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("r3_from_nll: alpha must be positive");
    return (alpha - std::min(nll, alpha)) / alpha;
}

double r3_fluency(const Params& lm, const ModelConfig& config, const Vocab& vocab,
                  const std::string& response_text, double alpha) {
    return r3_from_nll(response_nll(lm, config, vocab, response_text), alpha);
}

double r4_repetition(std::span<const int> response_tokens) {
    if (response_tokens.empty()) return 1.0;
    int repeats = 0;
    for (std::size_t i = 1; i < response_tokens.size(); ++i) {
        if (response_tokens[i] == response_tokens[i - 1]) ++repeats;
    }
    return 1.0 - static_cast<double>(repeats) / static_cast<double>(response_tokens.size());
}

RewardBreakdown compose_reward(const RewardWeights& w, double r1, double r2, double r3, double r4,
                               bool allow_subunit) {
    w.validate(allow_subunit);
    RewardBreakdown b{r1, r2, r3, r4, 0.0};
    b.total = w.g1 * r1 + w.g2 * r2 + w.g3 * r3 + w.g4 * r4;
    return b;
}

double calibrate_alpha(const Params& lm, const ModelConfig& lm_config, const Params& sl_policy,
                       const ModelConfig& policy_config, const std::vector<Sample>& dev_samples,
                       const Vocab& vocab, const AlphaCalibration& cal) {
    if (dev_samples.empty()) throw std::invalid_argument("calibrate_alpha: empty dev set");
    double max_nll = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < dev_samples.size(); ++i) {
        const Sample& s = dev_samples[i];
        const std::vector<int> prompt =
            build_prompt(s, vocab, policy_config.max_seq, cal.max_response);
        const NgramBlocker blocker = blocker_for_sample(s, vocab, cal.ngram_block);
        const GenerationResult gen =
            sample_response(sl_policy, policy_config, prompt, cal.max_response, cal.temperature,
                            blocker, derive_seed(cal.seed, 0xa1fa, i));
        std::vector<int> content = gen.ids;
        if (!content.empty() && content.back() == Vocab::kEos) content.pop_back();
        if (content.empty()) continue; // nothing to score
        const double nll = response_nll(lm, lm_config, vocab, detokenize(content, vocab));
        max_nll = std::max(max_nll, nll);
        any = true;
    }
    if (!any) {
        throw std::runtime_error("calibrate_alpha: the SL policy generated only empty responses");
    }
    return max_nll;
}

void RewardStack::validate() const {
    if (judge == nullptr || lm == nullptr || lm_config == nullptr || embedder == nullptr ||
        embedder_config == nullptr || vocab == nullptr) {
        throw std::invalid_argument("reward stack: missing component");
    }
    weights.validate(allow_subunit_weights);
    if (beta < 1.0) throw std::invalid_argument("reward stack: beta must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("reward stack: alpha must be positive");
}

RewardBreakdown RewardStack::score(const Sample& sample, const std::string& response_text,
                                   std::span<const int> response_tokens) const {
    const double r1 = r1_consistency(*judge, *vocab, sample.persona, response_text, beta);
    // degenerate empty responses earn no coherence or fluency credit
    double r2 = 0.0, r3 = 0.0;
    if (!response_tokens.empty() && !sample.history.empty()) {
        r2 = r2_coherence(*embedder, *embedder_config, *vocab, response_text,
                          sample.history.back());
    }
    if (!response_tokens.empty()) {
        r3 = r3_fluency(*lm, *lm_config, *vocab, response_text, alpha);
    }
    const double r4 = r4_repetition(response_tokens);
    return compose_reward(weights, r1, r2, r3, r4, allow_subunit_weights);
}

std::vector<GridRow> grid_search_weights(const std::vector<RewardWeights>& candidates,
                                         const GridRunFn& run_fn, int threads) {
    if (candidates.empty()) throw std::invalid_argument("grid_search_weights: empty candidate list");
    for (const RewardWeights& w : candidates) w.validate(/*allow_subunit=*/true);

    std::vector<GridRow> rows(candidates.size());
    parallel_for(candidates.size(), threads,
                 [&](std::size_t i) { rows[i] = run_fn(candidates[i], i); });

    std::stable_sort(rows.begin(), rows.end(),
                     [](const GridRow& a, const GridRow& b) { return a.f1 > b.f1; });
    return rows;
}

const std::vector<RewardWeights>& default_weight_grid() {
    static const std::vector<RewardWeights> grid = {
        {0.00, 0.00, 0.00, 0.00}, {1.00, 0.00, 0.00, 0.00}, {0.00, 1.00, 0.00, 0.00},
        {0.00, 0.00, 1.00, 0.00}, {0.00, 0.00, 0.00, 1.00}, {0.70, 0.00, 0.30, 0.00},
        {0.65, 0.00, 0.35, 0.00}, {0.60, 0.00, 0.40, 0.00}, {0.50, 0.00, 0.50, 0.00},
        {0.25, 0.25, 0.25, 0.25}, {0.60, 0.20, 0.00, 0.20}, {0.40, 0.20, 0.20, 0.20},
        {0.40, 0.16, 0.22, 0.22}, {0.45, 0.13, 0.17, 0.20}, {0.47, 0.12, 0.17, 0.20},
        {0.47, 0.10, 0.17, 0.21}, {0.47, 0.10, 0.19, 0.19}, {0.50, 0.10, 0.16, 0.20},
        {0.40, 0.20, 0.15, 0.20}, {0.43, 0.20, 0.12, 0.20}, {0.45, 0.20, 0.12, 0.20},
        {0.45, 0.25, 0.00, 0.25}, {0.40, 0.10, 0.25, 0.25}, {0.40, 0.15, 0.20, 0.20},
        {0.40, 0.20, 0.20, 0.15}, {0.45, 0.17, 0.21, 0.17}, {0.50, 0.15, 0.15, 0.15},
        {0.47, 0.13, 0.20, 0.15}, {0.50, 0.15, 0.20, 0.15}, {0.55, 0.15, 0.15, 0.10},
    };
    return grid;
}

std::string grid_csv_header() {
    return "g1,g2,g3,g4,f1,ppl,repetition_pct,consistent_pct,neutral_pct,contradiction_pct,pc\n";
}

std::string grid_csv_row(const GridRow& row) {
    return csv_join({format_double(row.weights.g1), format_double(row.weights.g2),
                     format_double(row.weights.g3), format_double(row.weights.g4),
                     format_double(row.f1), format_double(row.ppl),
                     format_double(row.repetition_pct), format_double(row.consistent_pct),
                     format_double(row.neutral_pct), format_double(row.contradiction_pct),
                     format_double(row.pc)});
}

} // namespace pf
