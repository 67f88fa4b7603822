#include "pf/trainer.hpp"

#include "pf/kernels.hpp"
#include "pf/rng.hpp"
#include "pf/runio.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pf {

std::vector<int> build_prompt(const Sample& sample, const Vocab& vocab, int max_seq, int reserve) {
    if (sample.history.empty()) throw std::invalid_argument("build_prompt: history must be non-empty");

    std::vector<int> fact_part;
    fact_part.push_back(Vocab::kBos);
    for (const Fact& f : sample.persona.facts) {
        for (int id : tokenize(f.surface, vocab)) fact_part.push_back(id);
    }
    fact_part.push_back(Vocab::kSep);

    std::vector<std::vector<int>> history_ids;
    for (const std::string& u : sample.history) history_ids.push_back(tokenize(u, vocab));

    const std::size_t budget = static_cast<std::size_t>(max_seq) - static_cast<std::size_t>(reserve);
    // drop oldest utterances until the layout fits; facts are never dropped
    std::size_t first = 0;
    auto total = [&] {
        std::size_t n = fact_part.size() + 1; // trailing SEP
        for (std::size_t i = first; i < history_ids.size(); ++i) n += history_ids[i].size();
        return n;
    };
    while (first < history_ids.size() && total() > budget) ++first;
    if (total() > budget) {
        throw std::invalid_argument("build_prompt: persona facts alone exceed the sequence budget");
    }

    std::vector<int> ids = fact_part;
    for (std::size_t i = first; i < history_ids.size(); ++i) {
        ids.insert(ids.end(), history_ids[i].begin(), history_ids[i].end());
    }
    ids.push_back(Vocab::kSep);
    return ids;
}

TrainSeq build_training_sequence(const Sample& sample, const std::string& response_text,
                                 const Vocab& vocab, int max_seq) {
    const std::vector<int> response = tokenize(response_text, vocab);
    const int reserve = static_cast<int>(response.size()) + 1; // response + EOS
    TrainSeq out;
    out.ids = build_prompt(sample, vocab, max_seq, reserve);
    out.response_begin = out.ids.size();
    out.ids.insert(out.ids.end(), response.begin(), response.end());
    out.ids.push_back(Vocab::kEos);
    out.mask.assign(out.ids.size(), 0);
    for (std::size_t k = out.response_begin; k < out.ids.size(); ++k) out.mask[k] = 1;
    return out;
}

NgramBlocker blocker_for_sample(const Sample& sample, const Vocab& vocab, int n) {
    std::vector<std::vector<int>> sources;
    for (const Fact& f : sample.persona.facts) sources.push_back(tokenize(f.surface, vocab));
    for (const std::string& u : sample.history) sources.push_back(tokenize(u, vocab));
    return NgramBlocker(sources, n);
}

// ---------------------------------------------------------------------------
// supervised fine-tuning
// ---------------------------------------------------------------------------

double classification_loss(const Params& params, const ModelConfig& config,
                           std::span<const int> prompt, const std::vector<std::vector<int>>& candidates,
                           int gold_index, double weight, std::vector<double>* grad) {
    if (candidates.size() < 2) {
        throw std::invalid_argument("classification_loss: need at least two candidates");
    }
    if (gold_index < 0 || gold_index >= static_cast<int>(candidates.size())) {
        throw std::invalid_argument("classification_loss: gold index out of range");
    }
    const int d = config.d_model;
    const double* w = params.head("cls_w");
    const double b = params.head("cls_b")[0];

    std::vector<ForwardTrace> traces;
    std::vector<double> scores;
    traces.reserve(candidates.size());
    for (const std::vector<int>& cand : candidates) {
        std::vector<int> ids(prompt.begin(), prompt.end());
        ids.insert(ids.end(), cand.begin(), cand.end());
        ids.push_back(Vocab::kEos);
        traces.push_back(forward(params, config, ids));
        const ForwardTrace& tr = traces.back();
        const double* h_last =
            tr.hidden.data() + (static_cast<std::size_t>(tr.T) - 1) * static_cast<std::size_t>(d);
        scores.push_back(active_kernels().dot(w, h_last, static_cast<std::size_t>(d)) + b);
    }

    std::vector<double> logp(scores.size());
    log_softmax_row(scores.data(), static_cast<int>(scores.size()), logp.data());
    const double loss = -logp[static_cast<std::size_t>(gold_index)];

    if (grad != nullptr && weight != 0.0) {
        double* g_w = grad->data() + params.offset_of("cls_w");
        double* g_b = grad->data() + params.offset_of("cls_b");
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            double ds = std::exp(logp[c]);
            if (static_cast<int>(c) == gold_index) ds -= 1.0;
            ds *= weight;
            const ForwardTrace& tr = traces[c];
            const std::size_t last = static_cast<std::size_t>(tr.T) - 1;
            const double* h_last = tr.hidden.data() + last * static_cast<std::size_t>(d);
            active_kernels().axpy(ds, h_last, g_w, static_cast<std::size_t>(d));
            g_b[0] += ds;
            std::vector<double> d_hidden(tr.hidden.size(), 0.0);
            active_kernels().axpy(ds, w, d_hidden.data() + last * static_cast<std::size_t>(d),
                                  static_cast<std::size_t>(d));
            backward(params, config, tr, nullptr, d_hidden.data(), *grad);
        }
    }
    return loss;
}

double sl_example_loss(const Params& params, const ModelConfig& config, const Vocab& vocab,
                       const Sample& sample, const std::vector<std::string>& distractors,
                       int gold_position, double lambda_cls, std::vector<double>* grad) {
    const TrainSeq seq = build_training_sequence(sample, sample.reference, vocab, config.max_seq);
    double loss = nll_loss(params, config, seq.ids, seq.mask, grad);

    if (lambda_cls != 0.0) {
        std::vector<std::vector<int>> candidates;
        std::size_t longest = tokenize(sample.reference, vocab).size();
        for (const std::string& text : distractors) {
            longest = std::max(longest, tokenize(text, vocab).size());
        }
        const std::vector<int> prompt =
            build_prompt(sample, vocab, config.max_seq, static_cast<int>(longest) + 1);
        for (std::size_t c = 0; c <= distractors.size(); ++c) {
            if (static_cast<int>(c) == gold_position) {
                candidates.push_back(tokenize(sample.reference, vocab));
            }
            if (c < distractors.size()) candidates.push_back(tokenize(distractors[c], vocab));
        }
        loss += lambda_cls *
                classification_loss(params, config, prompt, candidates, gold_position, lambda_cls, grad);
    }
    return loss;
}

void train_sl(Params& policy, const ModelConfig& config, const std::vector<Sample>& samples,
              const Vocab& vocab, const SlHyper& hyper, SlReport* report) {
    if (samples.size() < 2) {
        throw std::invalid_argument("train_sl: need at least 2 samples for distractor sourcing");
    }
    if (hyper.n_distractors < 0 || hyper.lambda_cls < 0.0) {
        throw std::invalid_argument("train_sl: invalid classification settings");
    }

    Rng rng(hyper.seed);
    AdamState opt;
    std::vector<double> grad(policy.size(), 0.0);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(hyper.batch));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = cursor; i < batch_end; ++i) {
                const Sample& sample = samples[order[i]];
                std::vector<std::string> distractors;
                int gold_position = 0;
                if (hyper.lambda_cls != 0.0 && hyper.n_distractors > 0) {
                    while (static_cast<int>(distractors.size()) < hyper.n_distractors) {
                        const std::size_t j = rng.next_below(samples.size());
                        if (j == order[i]) continue;
                        distractors.push_back(samples[j].reference);
                    }
                    gold_position = static_cast<int>(rng.next_below(distractors.size() + 1));
                }
                const double loss = sl_example_loss(policy, config, vocab, sample, distractors,
                                                    gold_position, hyper.lambda_cls, &grad);
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("train_sl: non-finite loss at sample " +
                                             std::to_string(order[i]));
                }
                epoch_loss += loss;
            }
            active_kernels().scal(1.0 / static_cast<double>(batch_end - cursor), grad.data(),
                                  grad.size());
            adam_step(policy, grad, opt, hyper.lr);
            cursor = batch_end;
        }
        if (report != nullptr) {
            report->epoch_losses.push_back(epoch_loss / static_cast<double>(samples.size()));
        }
    }
}

// ---------------------------------------------------------------------------
// reinforcement learning
// ---------------------------------------------------------------------------

double rl_surrogate(const Params& params, const ModelConfig& config, const Trajectory& traj,
                    std::span<const double> coeffs, std::vector<double>* grad) {
    if (coeffs.size() != traj.gen.ids.size()) {
        throw std::invalid_argument("rl_surrogate: coefficient count mismatch");
    }
    if (traj.gen.ids.empty()) return 0.0;

    std::vector<int> seq = traj.prompt_ids;
    seq.insert(seq.end(), traj.gen.ids.begin(), traj.gen.ids.end());
    const ForwardTrace tr = forward(params, config, seq);
    const int V = config.vocab_size;
    const std::size_t p = traj.prompt_ids.size();

    std::vector<double> probs;
    std::vector<double> d_logits;
    if (grad != nullptr) d_logits.assign(tr.logits.size(), 0.0);
    const double inv_temp = 1.0 / traj.gen.temperature;

    double loss = 0.0;
    for (std::size_t k = 0; k < traj.gen.ids.size(); ++k) {
        const std::size_t row_index = p + k - 1;
        const double* row = tr.logits.data() + row_index * static_cast<std::size_t>(V);
        if (!blocked_softmax(row, V, traj.gen.temperature, traj.gen.banned[k], probs)) {
            continue; // forced-EOS step carries no probability mass
        }
        const int tok = traj.gen.ids[k];
        loss -= coeffs[k] * std::log(probs[static_cast<std::size_t>(tok)]);
        if (grad != nullptr) {
            double* drow = d_logits.data() + row_index * static_cast<std::size_t>(V);
            for (int j = 0; j < V; ++j) {
                drow[j] += coeffs[k] * probs[static_cast<std::size_t>(j)] * inv_temp;
            }
            drow[tok] -= coeffs[k] * inv_temp;
        }
    }
    if (grad != nullptr) backward(params, config, tr, d_logits.data(), nullptr, *grad);
    return loss;
}

void rl_objective_grad_reinforce(const Params& params, const ModelConfig& config,
                                 const Trajectory& traj, std::vector<double>& grad) {
    const std::vector<double> coeffs(traj.gen.ids.size(), traj.reward.total);
    rl_surrogate(params, config, traj, coeffs, &grad);
}

void rl_objective_grad_ac(const Params& params, const ModelConfig& config,
                          const CriticState& critic, const Trajectory& traj,
                          std::vector<double>& grad) {
    const int d = config.d_model;
    if (critic.w.size() != static_cast<std::size_t>(d)) {
        throw std::invalid_argument("rl_objective_grad_ac: critic dimension mismatch");
    }
    std::vector<double> coeffs(traj.gen.ids.size());
    for (std::size_t k = 0; k < coeffs.size(); ++k) {
        const double eta = active_kernels().dot(
            critic.w.data(), traj.gen.hidden.data() + k * static_cast<std::size_t>(d),
            static_cast<std::size_t>(d));
        coeffs[k] = traj.reward.total - eta;
    }
    rl_surrogate(params, config, traj, coeffs, &grad);
}

double critic_loss(const std::vector<double>& w, std::span<const Trajectory> trajectories,
                   std::vector<double>* grad) {
    const std::size_t d = w.size();
    std::size_t n_tokens = 0;
    for (const Trajectory& t : trajectories) n_tokens += t.gen.ids.size();
    if (n_tokens == 0) throw std::invalid_argument("critic_loss: no tokens");
    if (grad != nullptr) grad->assign(d, 0.0);

    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n_tokens);
    for (const Trajectory& t : trajectories) {
        for (std::size_t k = 0; k < t.gen.ids.size(); ++k) {
            const double* h = t.gen.hidden.data() + k * d;
            const double err = active_kernels().dot(w.data(), h, d) - t.reward.total;
            loss += err * err * inv_n;
            if (grad != nullptr) {
                active_kernels().axpy(2.0 * err * inv_n, h, grad->data(), d);
            }
        }
    }
    return loss;
}

void critic_update(CriticState& critic, std::span<const Trajectory> trajectories, int inner_steps,
                   double lr) {
    std::vector<double> grad;
    for (int step = 0; step < inner_steps; ++step) {
        critic_loss(critic.w, trajectories, &grad);
        if (critic.opt.m.empty()) {
            critic.opt.m.assign(critic.w.size(), 0.0);
            critic.opt.v.assign(critic.w.size(), 0.0);
        }
        critic.opt.step += 1;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(critic.opt.step));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(critic.opt.step));
        active_kernels().adam_update(critic.w.data(), grad.data(), critic.opt.m.data(),
                                     critic.opt.v.data(), critic.w.size(), lr, 0.9, 0.999, 1e-8,
                                     bc1, bc2);
    }
}

RlResult train_rl(Params& policy, const ModelConfig& config, const RewardStack& stack,
                  const std::vector<Sample>& samples, const RlHyper& hyper,
                  CriticState* critic_io) {
    stack.validate();
    if (samples.empty()) throw std::invalid_argument("train_rl: empty sample list");
    if (hyper.batch < 1) throw std::invalid_argument("train_rl: batch must be >= 1");

    CriticState local_critic;
    CriticState& critic = critic_io != nullptr ? *critic_io : local_critic;
    if (critic.w.empty()) {
        // start from the checkpointed critic vector (zero after init)
        const double* w0 = policy.head("critic_w");
        critic.w.assign(w0, w0 + config.d_model);
    }

    Rng order_rng(mix_seed(hyper.seed));
    AdamState opt;
    std::vector<double> grad(policy.size(), 0.0);
    RlResult result;
    int step = 0;

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        order_rng.shuffle(order);
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(hyper.batch));
            std::fill(grad.begin(), grad.end(), 0.0);
            std::vector<Trajectory> batch;

            for (std::size_t i = cursor; i < batch_end; ++i) {
                const Sample& sample = samples[order[i]];
                Trajectory traj;
                traj.sample_index = order[i];
                traj.prompt_ids = build_prompt(sample, *stack.vocab, config.max_seq,
                                               hyper.max_response);
                const NgramBlocker blocker =
                    blocker_for_sample(sample, *stack.vocab, hyper.ngram_block);
                traj.gen = sample_response(policy, config, traj.prompt_ids, hyper.max_response,
                                           hyper.temperature, blocker,
                                           derive_seed(hyper.seed, 0x5011, static_cast<std::uint64_t>(step) + i - cursor));

                std::vector<int> content = traj.gen.ids;
                if (!content.empty() && content.back() == Vocab::kEos) content.pop_back();
                const std::string text = detokenize(content, *stack.vocab);
                traj.reward = stack.score(sample, text, content);
                if (!std::isfinite(traj.reward.total)) {
                    throw std::runtime_error("train_rl: non-finite reward at sample " +
                                             std::to_string(order[i]));
                }

                if (hyper.algorithm == RlAlgorithm::actor_critic) {
                    rl_objective_grad_ac(policy, config, critic, traj, grad);
                } else {
                    rl_objective_grad_reinforce(policy, config, traj, grad);
                }
                RlStepLog log;
                log.step = step + static_cast<int>(i - cursor);
                log.reward = traj.reward;
                log.response_len = static_cast<int>(content.size());
                result.curve.push_back(log);
                batch.push_back(std::move(traj));
            }

            if (hyper.batch > 1) {
                active_kernels().scal(1.0 / static_cast<double>(batch.size()), grad.data(),
                                      grad.size());
            }
            adam_step(policy, grad, opt, hyper.lr);

            if (hyper.algorithm == RlAlgorithm::actor_critic && !hyper.freeze_critic) {
                critic_update(critic, batch, hyper.critic_inner_steps, hyper.critic_lr);
            }
            step += static_cast<int>(batch.size());
            cursor = batch_end;
        }
    }

    // persist the critic with the policy checkpoint
    std::copy(critic.w.begin(), critic.w.end(), policy.head("critic_w"));
    if (!policy.all_finite()) throw std::runtime_error("train_rl: non-finite parameters after run");
    return result;
}

std::string reward_curve_csv(const std::vector<RlStepLog>& curve) {
    std::string out = "step,r1,r2,r3,r4,total,response_len\n";
    for (const RlStepLog& log : curve) {
        out += csv_join({std::to_string(log.step), format_double(log.reward.r1),
                         format_double(log.reward.r2), format_double(log.reward.r3),
                         format_double(log.reward.r4), format_double(log.reward.total),
                         std::to_string(log.response_len)});
    }
    return out;
}

} // namespace pf
