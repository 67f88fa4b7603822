#pragma once

#include "pf/corpus.hpp"
#include "pf/model.hpp"
#include "pf/reward.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pf {

// Conditioning prefix: [BOS] facts [SEP] history [SEP]. Guarantees room for
// `reserve` more tokens by dropping the oldest history utterances first;
// facts are never dropped.
std::vector<int> build_prompt(const Sample& sample, const Vocab& vocab, int max_seq, int reserve);

// prompt + response + [EOS] with the response tokens and EOS marked as
// prediction targets.
struct TrainSeq {
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    std::size_t response_begin = 0;
};
TrainSeq build_training_sequence(const Sample& sample, const std::string& response_text,
                                 const Vocab& vocab, int max_seq);

// Every n-gram of the persona facts and of each history utterance.
NgramBlocker blocker_for_sample(const Sample& sample, const Vocab& vocab, int n);

// ---------------------------------------------------------------------------
// supervised fine-tuning
// ---------------------------------------------------------------------------

// LM loss over the response plus lambda_cls times the candidate
// classification loss (gold response vs distractors, scored at each
// candidate's final token). lambda_cls == 0 skips the classifier entirely.
double sl_example_loss(const Params& params, const ModelConfig& config, const Vocab& vocab,
                       const Sample& sample, const std::vector<std::string>& distractors,
                       int gold_position, double lambda_cls, std::vector<double>* grad);

// Candidate-classification cross-entropy on its own (finite-difference
// testable). candidates are full response texts; weight scales the gradient.
double classification_loss(const Params& params, const ModelConfig& config,
                           std::span<const int> prompt, const std::vector<std::vector<int>>& candidates,
                           int gold_index, double weight, std::vector<double>* grad);

struct SlHyper {
    double lr = 1e-3;
    int batch = 8;
    int epochs = 3;
    int n_distractors = 2;
    double lambda_cls = 1.0;
    std::uint64_t seed = 0;
};

struct SlReport {
    std::vector<double> epoch_losses; // mean total loss per epoch
};

void train_sl(Params& policy, const ModelConfig& config, const std::vector<Sample>& samples,
              const Vocab& vocab, const SlHyper& hyper, SlReport* report);

// ---------------------------------------------------------------------------
// reinforcement learning
// ---------------------------------------------------------------------------

// One sampled response with everything the gradient estimators consume.
struct Trajectory {
    std::size_t sample_index = 0;
    std::vector<int> prompt_ids;
    GenerationResult gen; // ids, post-blocking logprobs, hidden states, masks
    RewardBreakdown reward;
};

// Critic eta = w^T h_k plus its Adam state. w is mirrored into the policy's
// critic_w array when a run finishes so checkpoints carry it.
struct CriticState {
    std::vector<double> w;
    AdamState opt;
};

// Surrogate sum_k coeff_k * log p(t_k) under the post-blocking renormalized
// distribution, returned as a descent loss (negated). Gradient accumulates
// into grad when non-null.
double rl_surrogate(const Params& params, const ModelConfig& config, const Trajectory& traj,
                    std::span<const double> coeffs, std::vector<double>* grad);

// REINFORCE: every token weighted by the full response reward.
void rl_objective_grad_reinforce(const Params& params, const ModelConfig& config,
                                 const Trajectory& traj, std::vector<double>& grad);

// Actor-critic: per-token advantage R - w^T h_k, treated as a constant.
// Collapses to REINFORCE when w is zero.
void rl_objective_grad_ac(const Params& params, const ModelConfig& config,
                          const CriticState& critic, const Trajectory& traj,
                          std::vector<double>& grad);

// Mean squared error between w^T h_k and the trajectory reward, over all
// tokens of all trajectories. Gradient w.r.t. w only.
double critic_loss(const std::vector<double>& w, std::span<const Trajectory> trajectories,
                   std::vector<double>* grad);

void critic_update(CriticState& critic, std::span<const Trajectory> trajectories, int inner_steps,
                   double lr);

enum class RlAlgorithm { actor_critic, reinforce };

struct RlHyper {
    RlAlgorithm algorithm = RlAlgorithm::actor_critic;
    int epochs = 1;
    int batch = 1;
    double lr = 1e-4;
    double temperature = 1.0;
    int max_response = 20;
    int ngram_block = 3;
    int critic_inner_steps = 5;
    double critic_lr = 1e-2;
    bool freeze_critic = false;
    std::uint64_t seed = 0;
};

struct RlStepLog {
    int step = 0;
    RewardBreakdown reward;
    int response_len = 0;
};

struct RlResult {
    std::vector<RlStepLog> curve;
};

// RL fine-tuning loop: sample one trajectory per state, score the decoded
// text, apply the selected estimator, then (actor-critic) update the critic.
// critic_io, when supplied, carries the critic across calls; otherwise a
// fresh zero critic is used.
RlResult train_rl(Params& policy, const ModelConfig& config, const RewardStack& stack,
                  const std::vector<Sample>& samples, const RlHyper& hyper,
                  CriticState* critic_io = nullptr);

std::string reward_curve_csv(const std::vector<RlStepLog>& curve);

} // namespace pf
