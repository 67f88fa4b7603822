#pragma once

#include "pf/model.hpp"
#include "pf/reward.hpp"
#include "pf/trainer.hpp"

#include <cstdint>
#include <string>

namespace pf {

// Everything one experiment needs, serialized verbatim into each run
// directory. Paper-reported settings are the defaults: beta 2, alpha 4,
// response cap 20, 5 critic updates per policy update, 3 SL epochs, 1 RL
// epoch, weights (0.40, 0.16, 0.22, 0.22), trigram blocking.
struct ExperimentConfig {
    struct Corpus {
        std::uint64_t seed = 13;
        int n_personas = 40;
        int dialogues_per_persona = 2;
    } corpus;

    struct Model {
        int n_layers = 2;
        int n_heads = 2;
        int d_model = 64;
        int d_ff = 128;
        int max_seq = 128;
    } model;

    NliHyper nli;
    struct LmHyper {
        double lr = 1e-3;
        int batch = 16;
        int epochs = 10;
        std::uint64_t seed = 0;
        double heldout_fraction = 0.1;
    } lm;
    SlHyper sl;
    RlHyper rl;

    struct Reward {
        double beta = 2.0;
        double alpha = 4.0;
        bool calibrate_alpha = false;
        RewardWeights weights;
    } reward;

    struct Eval {
        std::uint64_t gen_seed = 7;
        double temperature = 1.0;
    } eval;

    int threads = 0; // 0 = PERSONA_FORGE_THREADS / hardware

    ModelConfig policy_model_config(int vocab_size) const;
    ModelConfig judge_model_config(int vocab_size) const;

    void validate() const; // every module precondition checked up front
    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;
};

} // namespace pf
