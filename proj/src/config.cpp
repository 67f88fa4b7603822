#include "pf/config.hpp"

#include "pf/runio.hpp"

#include <json.hpp>

#include <stdexcept>

namespace pf {

using json = nlohmann::json;

ModelConfig ExperimentConfig::policy_model_config(int vocab_size) const {
    ModelConfig c;
    c.n_layers = model.n_layers;
    c.n_heads = model.n_heads;
    c.d_model = model.d_model;
    c.d_ff = model.d_ff;
    c.max_seq = model.max_seq;
    c.vocab_size = vocab_size;
    c.mode = AttnMode::causal;
    return c;
}

ModelConfig ExperimentConfig::judge_model_config(int vocab_size) const {
    ModelConfig c = policy_model_config(vocab_size);
    c.mode = AttnMode::bidirectional;
    return c;
}

void ExperimentConfig::validate() const {
    if (corpus.n_personas < 2) {
        throw std::invalid_argument("config: corpus.n_personas must be at least 2");
    }
    if (corpus.dialogues_per_persona < 1) {
        throw std::invalid_argument("config: corpus.dialogues_per_persona must be at least 1");
    }
    policy_model_config(512).validate();
    if (nli.lr <= 0 || nli.batch < 1 || nli.epochs < 1) {
        throw std::invalid_argument("config: invalid nli hyperparameters");
    }
    if (lm.lr <= 0 || lm.batch < 1 || lm.epochs < 1) {
        throw std::invalid_argument("config: invalid lm hyperparameters");
    }
    if (sl.lr <= 0 || sl.batch < 1 || sl.epochs < 1 || sl.n_distractors < 0 || sl.lambda_cls < 0) {
        throw std::invalid_argument("config: invalid sl hyperparameters");
    }
    if (rl.lr <= 0 || rl.epochs < 1 || rl.batch < 1 || rl.critic_inner_steps < 0 ||
        rl.critic_lr <= 0) {
        throw std::invalid_argument("config: invalid rl hyperparameters");
    }
    if (!(rl.temperature > 0)) throw std::invalid_argument("config: rl.temperature must be positive");
    if (rl.max_response < 1 || rl.max_response > 20) {
        throw std::invalid_argument("config: rl.max_response must be in [1, 20]");
    }
    if (rl.ngram_block < 1) throw std::invalid_argument("config: rl.ngram_block must be >= 1");
    if (reward.beta < 1.0) throw std::invalid_argument("config: reward.beta must be >= 1");
    if (!(reward.alpha > 0)) throw std::invalid_argument("config: reward.alpha must be positive");
    reward.weights.validate();
    if (!(eval.temperature > 0)) {
        throw std::invalid_argument("config: eval.temperature must be positive");
    }
    if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
}

namespace {

json weights_to_json(const RewardWeights& w) { return json::array({w.g1, w.g2, w.g3, w.g4}); }

RewardWeights weights_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) {
        throw std::runtime_error("config: reward.weights must be an array of four numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

} // namespace

std::string ExperimentConfig::to_json() const {
    json j;
    j["corpus"] = {{"seed", corpus.seed},
                   {"n_personas", corpus.n_personas},
                   {"dialogues_per_persona", corpus.dialogues_per_persona}};
    j["model"] = {{"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},
                  {"d_model", model.d_model},
                  {"d_ff", model.d_ff},
                  {"max_seq", model.max_seq}};
    j["nli"] = {{"lr", nli.lr},
                {"batch", nli.batch},
                {"epochs", nli.epochs},
                {"seed", nli.seed},
                {"heldout_fraction", nli.heldout_fraction}};
    j["lm"] = {{"lr", lm.lr},
               {"batch", lm.batch},
               {"epochs", lm.epochs},
               {"seed", lm.seed},
               {"heldout_fraction", lm.heldout_fraction}};
    j["sl"] = {{"lr", sl.lr},         {"batch", sl.batch},
               {"epochs", sl.epochs}, {"n_distractors", sl.n_distractors},
               {"lambda_cls", sl.lambda_cls}, {"seed", sl.seed}};
    j["rl"] = {{"algorithm", rl.algorithm == RlAlgorithm::actor_critic ? "actor_critic" : "reinforce"},
               {"epochs", rl.epochs},
               {"batch", rl.batch},
               {"lr", rl.lr},
               {"temperature", rl.temperature},
               {"max_response", rl.max_response},
               {"ngram_block", rl.ngram_block},
               {"critic_inner_steps", rl.critic_inner_steps},
               {"critic_lr", rl.critic_lr},
               {"freeze_critic", rl.freeze_critic},
               {"seed", rl.seed}};
    j["reward"] = {{"beta", reward.beta},
                   {"alpha", reward.alpha},
                   {"calibrate_alpha", reward.calibrate_alpha},
                   {"weights", weights_to_json(reward.weights)}};
    j["eval"] = {{"gen_seed", eval.gen_seed}, {"temperature", eval.temperature}};
    j["threads"] = threads;
    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("config: malformed JSON (") + e.what() + ")");
    }
    ExperimentConfig c;
    auto get = [](const json& obj, const char* key, auto& field) {
        if (obj.contains(key)) field = obj.at(key).template get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("corpus")) {
        const json& s = j["corpus"];
        get(s, "seed", c.corpus.seed);
        get(s, "n_personas", c.corpus.n_personas);
        get(s, "dialogues_per_persona", c.corpus.dialogues_per_persona);
    }
    if (j.contains("model")) {
        const json& s = j["model"];
        get(s, "n_layers", c.model.n_layers);
        get(s, "n_heads", c.model.n_heads);
        get(s, "d_model", c.model.d_model);
        get(s, "d_ff", c.model.d_ff);
        get(s, "max_seq", c.model.max_seq);
    }
    if (j.contains("nli")) {
        const json& s = j["nli"];
        get(s, "lr", c.nli.lr);
        get(s, "batch", c.nli.batch);
        get(s, "epochs", c.nli.epochs);
        get(s, "seed", c.nli.seed);
        get(s, "heldout_fraction", c.nli.heldout_fraction);
    }
    if (j.contains("lm")) {
        const json& s = j["lm"];
        get(s, "lr", c.lm.lr);
        get(s, "batch", c.lm.batch);
        get(s, "epochs", c.lm.epochs);
        get(s, "seed", c.lm.seed);
        get(s, "heldout_fraction", c.lm.heldout_fraction);
    }
    if (j.contains("sl")) {
        const json& s = j["sl"];
        get(s, "lr", c.sl.lr);
        get(s, "batch", c.sl.batch);
        get(s, "epochs", c.sl.epochs);
        get(s, "n_distractors", c.sl.n_distractors);
        get(s, "lambda_cls", c.sl.lambda_cls);
        get(s, "seed", c.sl.seed);
    }
    if (j.contains("rl")) {
        const json& s = j["rl"];
        if (s.contains("algorithm")) {
            const std::string a = s["algorithm"].get<std::string>();
            if (a == "actor_critic" || a == "ac") {
                c.rl.algorithm = RlAlgorithm::actor_critic;
            } else if (a == "reinforce") {
                c.rl.algorithm = RlAlgorithm::reinforce;
            } else {
                throw std::runtime_error("config: rl.algorithm must be actor_critic or reinforce");
            }
        }
        get(s, "epochs", c.rl.epochs);
        get(s, "batch", c.rl.batch);
        get(s, "lr", c.rl.lr);
        get(s, "temperature", c.rl.temperature);
        get(s, "max_response", c.rl.max_response);
        get(s, "ngram_block", c.rl.ngram_block);
        get(s, "critic_inner_steps", c.rl.critic_inner_steps);
        get(s, "critic_lr", c.rl.critic_lr);
        get(s, "freeze_critic", c.rl.freeze_critic);
        get(s, "seed", c.rl.seed);
    }
    if (j.contains("reward")) {
        const json& s = j["reward"];
        get(s, "beta", c.reward.beta);
        get(s, "alpha", c.reward.alpha);
        get(s, "calibrate_alpha", c.reward.calibrate_alpha);
        if (s.contains("weights")) c.reward.weights = weights_from_json(s["weights"]);
    }
    if (j.contains("eval")) {
        const json& s = j["eval"];
        get(s, "gen_seed", c.eval.gen_seed);
        get(s, "temperature", c.eval.temperature);
    }
    get(j, "threads", c.threads);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    return from_json(read_text_file(path));
}

void ExperimentConfig::save(const std::string& path) const { write_text_file(path, to_json()); }

} // namespace pf
