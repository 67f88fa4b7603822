// persona-forge: experiment orchestration for the persona-consistency RL
// pipeline. One stage per invocation; every stage writes its effective
// config and artifacts into --out.

#include "pf/config.hpp"
#include "pf/kernels.hpp"
#include "pf/corpus.hpp"
#include "pf/eval.hpp"
#include "pf/model.hpp"
#include "pf/nli.hpp"
#include "pf/reward.hpp"
#include "pf/rng.hpp"
#include "pf/runio.hpp"
#include "pf/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <set>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using pf::ExperimentConfig;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::vector<double>> weights;
    std::optional<std::string> algorithm;
    std::optional<double> beta;
    std::optional<double> alpha;
    std::optional<int> max_response;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
    cmd->add_option("--config", args.config_path, "experiment config JSON");
    auto* out = cmd->add_option("--out", args.out_dir, "output directory");
    if (needs_out) out->required();
    cmd->add_option("--seed", args.seed, "override the stage seed");
    cmd->add_option("--weights", args.weights, "override reward weights g1,g2,g3,g4")
        ->delimiter(',')
        ->expected(4);
    cmd->add_option("--algorithm", args.algorithm, "ac|actor_critic|reinforce");
    cmd->add_option("--beta", args.beta, "contradiction penalty for R1");
    cmd->add_option("--alpha", args.alpha, "NLL clamp for R3");
    cmd->add_option("--max-response", args.max_response, "response length cap (<= 20)");
    cmd->add_option("--threads", args.threads, "worker cap (default PERSONA_FORGE_THREADS)");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) {
        if (!pf::file_exists(args.config_path)) {
            throw std::runtime_error("missing artifact: " + args.config_path);
        }
        cfg = ExperimentConfig::load(args.config_path);
    }
    if (args.weights) {
        cfg.reward.weights = {(*args.weights)[0], (*args.weights)[1], (*args.weights)[2],
                              (*args.weights)[3]};
    }
    if (args.algorithm) {
        if (*args.algorithm == "ac" || *args.algorithm == "actor_critic") {
            cfg.rl.algorithm = pf::RlAlgorithm::actor_critic;
        } else if (*args.algorithm == "reinforce") {
            cfg.rl.algorithm = pf::RlAlgorithm::reinforce;
        } else {
            throw std::runtime_error("unknown --algorithm: " + *args.algorithm);
        }
    }
    if (args.beta) cfg.reward.beta = *args.beta;
    if (args.alpha) cfg.reward.alpha = *args.alpha;
    if (args.max_response) cfg.rl.max_response = *args.max_response;
    if (args.threads) cfg.threads = *args.threads;
    return cfg;
}

void start_stage(ExperimentConfig& cfg, const CommonArgs& args) {
    cfg.validate();
    pf::ensure_dir(args.out_dir);
    cfg.save(args.out_dir + "/config.json");
}

struct CorpusOnDisk {
    std::vector<pf::Sample> samples;
    std::vector<pf::NliExample> nli_examples;
    pf::Vocab vocab;
};

CorpusOnDisk load_corpus_dir(const std::string& dir) {
    for (const char* f : {"/corpus.jsonl", "/nli.jsonl", "/vocab.json"}) {
        if (!pf::file_exists(dir + f)) throw std::runtime_error("missing artifact: " + dir + f);
    }
    return {pf::load_samples_jsonl(dir + "/corpus.jsonl"), pf::load_nli_jsonl(dir + "/nli.jsonl"),
            pf::load_vocab_json(dir + "/vocab.json")};
}

pf::Checkpoint require_checkpoint(const std::string& prefix) {
    if (!pf::file_exists(prefix + ".json") || !pf::file_exists(prefix + ".bin")) {
        throw std::runtime_error("missing artifact: " + prefix + ".{json,bin}");
    }
    return pf::load_checkpoint(prefix);
}

std::vector<pf::Sample> split_of(const std::vector<pf::Sample>& samples, pf::Split split) {
    std::vector<pf::Sample> out;
    for (const pf::Sample& s : samples) {
        if (s.split == split) out.push_back(s);
    }
    return out;
}

// 90/10 split of the train samples: RL runs on the 90, weight tuning and
// alpha calibration use the 10.
void split_rl_tune(const std::vector<pf::Sample>& train, std::uint64_t seed,
                   std::vector<pf::Sample>& rl_part, std::vector<pf::Sample>& tune_part) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    pf::Rng rng(pf::mix_seed(seed ^ 0x90a1ull));
    rng.shuffle(order);
    const std::size_t n_tune = std::max<std::size_t>(1, train.size() / 10);
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_tune ? tune_part : rl_part).push_back(train[order[i]]);
    }
}

std::vector<std::string> all_utterances(const std::vector<pf::Sample>& samples) {
    // unique utterances from full dialogues: each sample adds its reference;
    // histories are prefixes of later samples so references cover holder
    // turns, and we add partner turns from the longest histories
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const pf::Sample& s : samples) {
        for (const std::string& u : s.history) {
            if (seen.insert(u).second) out.push_back(u);
        }
        if (seen.insert(s.reference).second) out.push_back(s.reference);
    }
    return out;
}

// Fluency LM training: causal LM over standalone utterances.
pf::Params train_fluency_lm(const ExperimentConfig& cfg, const pf::Vocab& vocab,
                            const std::vector<std::string>& utterances, double* heldout_ppl,
                            double* untrained_ppl, std::vector<std::string>* heldout_out) {
    const pf::ModelConfig mc = cfg.policy_model_config(vocab.size());
    pf::Params lm(mc);
    lm.init_weights(pf::mix_seed(cfg.lm.seed ^ 0x11ull));

    std::vector<std::string> pool = utterances;
    pf::Rng rng(cfg.lm.seed);
    rng.shuffle(pool);
    const std::size_t n_held = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(pool.size()) * cfg.lm.heldout_fraction));
    if (n_held >= pool.size()) throw std::runtime_error("train-lm: not enough utterances");
    std::vector<std::string> heldout(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_held));
    std::vector<std::string> train(pool.begin() + static_cast<std::ptrdiff_t>(n_held), pool.end());

    if (untrained_ppl != nullptr) *untrained_ppl = pf::perplexity_lm(lm, mc, vocab, heldout);

    pf::AdamState opt;
    std::vector<double> grad(lm.size(), 0.0);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.lm.epochs; ++epoch) {
        rng.shuffle(order);
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(cfg.lm.batch));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = cursor; i < batch_end; ++i) {
                std::vector<int> ids;
                ids.push_back(pf::Vocab::kBos);
                for (int id : pf::tokenize(train[order[i]], vocab)) ids.push_back(id);
                ids.push_back(pf::Vocab::kEos);
                if (static_cast<int>(ids.size()) > mc.max_seq) {
                    ids.resize(static_cast<std::size_t>(mc.max_seq));
                }
                std::vector<std::uint8_t> mask(ids.size(), 1);
                mask[0] = 0;
                pf::nll_loss(lm, mc, ids, mask, &grad);
            }
            pf::active_kernels().scal(1.0 / static_cast<double>(batch_end - cursor), grad.data(),
                                      grad.size());
            pf::adam_step(lm, grad, opt, cfg.lm.lr);
            cursor = batch_end;
        }
    }
    if (heldout_ppl != nullptr) *heldout_ppl = pf::perplexity_lm(lm, mc, vocab, heldout);
    if (heldout_out != nullptr) *heldout_out = heldout;
    return lm;
}

struct RewardComponents {
    pf::Checkpoint judge_ckpt;
    pf::Checkpoint lm_ckpt;
    pf::Checkpoint embedder_ckpt;
    pf::NliJudge judge;

    RewardComponents(pf::Checkpoint j, pf::Checkpoint l, pf::Checkpoint e)
        : judge_ckpt(std::move(j)),
          lm_ckpt(std::move(l)),
          embedder_ckpt(std::move(e)),
          judge(judge_ckpt.config, judge_ckpt.params) {}

    pf::RewardStack stack(const ExperimentConfig& cfg, const pf::Vocab& vocab, double alpha) const {
        pf::RewardStack s;
        s.judge = &judge;
        s.lm = &lm_ckpt.params;
        s.lm_config = &lm_ckpt.config;
        s.embedder = &embedder_ckpt.params;
        s.embedder_config = &embedder_ckpt.config;
        s.vocab = &vocab;
        s.weights = cfg.reward.weights;
        s.beta = cfg.reward.beta;
        s.alpha = alpha;
        return s;
    }
};

double resolve_alpha(const ExperimentConfig& cfg, const RewardComponents& rc,
                     const pf::Checkpoint& sl, const std::vector<pf::Sample>& tune,
                     const pf::Vocab& vocab) {
    if (!cfg.reward.calibrate_alpha) return cfg.reward.alpha;
    pf::AlphaCalibration cal;
    cal.max_response = cfg.rl.max_response;
    cal.temperature = cfg.rl.temperature;
    cal.ngram_block = cfg.rl.ngram_block;
    cal.seed = cfg.rl.seed;
    return pf::calibrate_alpha(rc.lm_ckpt.params, rc.lm_ckpt.config, sl.params, sl.config, tune,
                               vocab, cal);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_corpus(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.corpus.seed = *args.seed;
    start_stage(cfg, args);
    const pf::CorpusBundle bundle =
        pf::generate_corpus(cfg.corpus.seed, cfg.corpus.n_personas, cfg.corpus.dialogues_per_persona);
    pf::save_samples_jsonl(args.out_dir + "/corpus.jsonl", bundle.samples);
    pf::save_nli_jsonl(args.out_dir + "/nli.jsonl", bundle.nli_examples);
    pf::save_vocab_json(args.out_dir + "/vocab.json", bundle.vocab);
    long n_train = 0, n_val = 0;
    for (const pf::Sample& s : bundle.samples) (s.split == pf::Split::train ? n_train : n_val) += 1;
    std::cout << "corpus: " << bundle.samples.size() << " samples (" << n_train << " train, "
              << n_val << " validation), " << bundle.nli_examples.size() << " nli examples, vocab "
              << bundle.vocab.size() << "\n";
    return 0;
}

int cmd_train_nli(const CommonArgs& args, const std::string& corpus_dir) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.nli.seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    pf::NliReport report;
    const pf::NliJudge judge = pf::train_nli(
        corpus.nli_examples, cfg.judge_model_config(corpus.vocab.size()), cfg.nli, corpus.vocab,
        &report);
    pf::save_checkpoint(args.out_dir + "/nli3", judge.params, "nli3");

    std::string csv = "metric,value\n";
    csv += pf::csv_join({"heldout_accuracy", pf::format_double(report.heldout_accuracy)});
    csv += pf::csv_join({"n_train", std::to_string(report.n_train)});
    csv += pf::csv_join({"n_heldout", std::to_string(report.n_heldout)});
    static const char* names[3] = {"entailment", "contradiction", "neutral"};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            csv += pf::csv_join({std::string("confusion_") + names[r] + "_" + names[c],
                                 std::to_string(report.confusion[r][c])});
        }
    }
    pf::write_text_file(args.out_dir + "/metrics.csv", csv);
    std::cout << "nli judge: heldout accuracy " << report.heldout_accuracy << " ("
              << report.n_heldout << " examples)\n";
    return 0;
}

int cmd_train_lm(const CommonArgs& args, const std::string& corpus_dir) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.lm.seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    const std::vector<std::string> utterances =
        all_utterances(split_of(corpus.samples, pf::Split::train));
    double heldout_ppl = 0.0, untrained_ppl = 0.0;
    const pf::Params lm =
        train_fluency_lm(cfg, corpus.vocab, utterances, &heldout_ppl, &untrained_ppl, nullptr);
    pf::save_checkpoint(args.out_dir + "/lm", lm, "lm");
    std::string csv = "metric,value\n";
    csv += pf::csv_join({"heldout_ppl", pf::format_double(heldout_ppl)});
    csv += pf::csv_join({"untrained_ppl", pf::format_double(untrained_ppl)});
    csv += pf::csv_join({"n_utterances", std::to_string(utterances.size())});
    pf::write_text_file(args.out_dir + "/metrics.csv", csv);
    std::cout << "fluency lm: heldout ppl " << heldout_ppl << " (untrained " << untrained_ppl
              << ")\n";
    return 0;
}

int cmd_train_sl(const CommonArgs& args, const std::string& corpus_dir) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.sl.seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    const std::vector<pf::Sample> train = split_of(corpus.samples, pf::Split::train);
    const pf::ModelConfig mc = cfg.policy_model_config(corpus.vocab.size());
    pf::Params policy(mc);
    policy.init_weights(pf::mix_seed(cfg.sl.seed ^ 0x51ull));
    pf::SlReport report;
    pf::train_sl(policy, mc, train, corpus.vocab, cfg.sl, &report);
    pf::save_checkpoint(args.out_dir + "/sl", policy, "sl");
    std::string csv = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
        csv += pf::csv_join({std::to_string(e), pf::format_double(report.epoch_losses[e])});
    }
    pf::write_text_file(args.out_dir + "/loss.csv", csv);
    std::cout << "sl policy: " << train.size() << " samples, final epoch loss "
              << (report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back()) << "\n";
    return 0;
}

int cmd_train_rl(const CommonArgs& args, const std::string& corpus_dir, const std::string& sl_prefix,
                 const std::string& nli_prefix, const std::string& lm_prefix) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.rl.seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    pf::Checkpoint sl = require_checkpoint(sl_prefix);
    RewardComponents rc(require_checkpoint(nli_prefix), require_checkpoint(lm_prefix),
                        require_checkpoint(sl_prefix));

    std::vector<pf::Sample> rl_part, tune_part;
    split_rl_tune(split_of(corpus.samples, pf::Split::train), cfg.corpus.seed, rl_part, tune_part);

    const double alpha = resolve_alpha(cfg, rc, sl, tune_part, corpus.vocab);
    const pf::RewardStack stack = rc.stack(cfg, corpus.vocab, alpha);

    pf::Params policy = sl.params;
    const pf::RlResult result = pf::train_rl(policy, sl.config, stack, rl_part, cfg.rl);
    const std::string tag =
        cfg.rl.algorithm == pf::RlAlgorithm::actor_critic ? "rl-ac" : "rl-reinforce";
    pf::save_checkpoint(args.out_dir + "/" + tag, policy, tag);
    pf::write_text_file(args.out_dir + "/reward_curve.csv", pf::reward_curve_csv(result.curve));

    std::vector<double> totals;
    for (const auto& log : result.curve) totals.push_back(log.reward.total);
    pf::write_text_file(args.out_dir + "/reward_curve.svg",
                        pf::render_curve_svg("reward per step (" + tag + ")", {{"total", totals}}));
    double mean = 0.0;
    for (double t : totals) mean += t;
    if (!totals.empty()) mean /= static_cast<double>(totals.size());
    std::cout << tag << ": " << result.curve.size() << " steps, alpha " << alpha
              << ", mean reward " << mean << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& corpus_dir,
                 const std::string& policy_prefix, const std::string& nli_prefix,
                 const std::string& lm_prefix) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.eval.gen_seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    pf::Checkpoint policy = require_checkpoint(policy_prefix);
    pf::Checkpoint nli = require_checkpoint(nli_prefix);
    pf::Checkpoint lm = require_checkpoint(lm_prefix);
    const pf::NliJudge judge(nli.config, nli.params);

    const std::vector<pf::Sample> eval_samples = split_of(corpus.samples, pf::Split::validation);
    const pf::FullReportOutput out = pf::full_report(
        policy.params, policy.config, judge, lm.params, lm.config, eval_samples, corpus.vocab,
        cfg.eval.gen_seed, cfg.rl.max_response, cfg.rl.ngram_block, cfg.eval.temperature,
        cfg.threads);

    pf::write_text_file(args.out_dir + "/report.json", out.report.to_json());
    pf::write_text_file(args.out_dir + "/report.csv",
                        pf::EvalReport::csv_header() + out.report.to_csv_row());
    pf::write_text_file(args.out_dir + "/labels.csv", out.label_dump_csv);
    std::string gens;
    for (std::size_t i = 0; i < out.generated.size(); ++i) {
        gens += std::to_string(i) + "\t" + out.generated[i] + "\n";
    }
    pf::write_text_file(args.out_dir + "/generations.tsv", gens);
    std::cout << "eval: ppl " << out.report.ppl << ", f1 " << out.report.f1 << ", bleu "
              << out.report.bleu << ", pc " << out.report.pc << ", repetition "
              << out.report.repetition_pct << "%\n";
    return 0;
}

int cmd_grid_search(const CommonArgs& args, const std::string& corpus_dir,
                    const std::string& sl_prefix, const std::string& nli_prefix,
                    const std::string& lm_prefix, const std::string& grid_path) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.rl.seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    pf::Checkpoint sl = require_checkpoint(sl_prefix);
    RewardComponents rc(require_checkpoint(nli_prefix), require_checkpoint(lm_prefix),
                        require_checkpoint(sl_prefix));

    std::vector<pf::Sample> rl_part, tune_part;
    split_rl_tune(split_of(corpus.samples, pf::Split::train), cfg.corpus.seed, rl_part, tune_part);
    const double alpha = resolve_alpha(cfg, rc, sl, tune_part, corpus.vocab);

    std::vector<pf::RewardWeights> candidates;
    if (grid_path.empty()) {
        candidates = pf::default_weight_grid();
    } else {
        if (!pf::file_exists(grid_path)) throw std::runtime_error("missing artifact: " + grid_path);
        const nlohmann::json j = nlohmann::json::parse(pf::read_text_file(grid_path));
        for (const auto& row : j) {
            candidates.push_back(
                {row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>(),
                 row.at(3).get<double>()});
        }
    }

    const auto run_candidate = [&](const pf::RewardWeights& w, std::size_t index) {
        ExperimentConfig local = cfg;
        local.reward.weights = w;
        pf::RewardStack stack = rc.stack(local, corpus.vocab, alpha);
        stack.allow_subunit_weights = true;
        pf::Params policy = sl.params;
        pf::RlHyper hyper = local.rl;
        hyper.seed = pf::derive_seed(local.rl.seed, 0x9d1d, index);
        const pf::RlResult rl = pf::train_rl(policy, sl.config, stack, rl_part, hyper);

        const std::string sub = args.out_dir + "/candidate_" + std::to_string(index);
        pf::ensure_dir(sub);
        pf::write_text_file(sub + "/reward_curve.csv", pf::reward_curve_csv(rl.curve));
        pf::save_checkpoint(sub + "/rl", policy, "rl-grid");

        const pf::FullReportOutput rep = pf::full_report(
            policy, sl.config, rc.judge, rc.lm_ckpt.params, rc.lm_ckpt.config, tune_part,
            corpus.vocab, local.eval.gen_seed, local.rl.max_response, local.rl.ngram_block,
            local.eval.temperature, 1);
        pf::GridRow row;
        row.weights = w;
        row.f1 = rep.report.f1;
        row.ppl = rep.report.ppl;
        row.repetition_pct = rep.report.repetition_pct;
        row.consistent_pct = rep.report.freq_consistent;
        row.neutral_pct = rep.report.freq_neutral;
        row.contradiction_pct = rep.report.freq_contradicting;
        row.pc = rep.report.pc;
        return row;
    };

    const std::vector<pf::GridRow> rows =
        pf::grid_search_weights(candidates, run_candidate, cfg.threads);
    std::string csv = pf::grid_csv_header();
    for (const pf::GridRow& row : rows) csv += pf::grid_csv_row(row);
    pf::write_text_file(args.out_dir + "/grid.csv", csv);
    std::cout << "grid search: " << rows.size() << " candidates, best f1 " << rows.front().f1
              << " at (" << rows.front().weights.g1 << "," << rows.front().weights.g2 << ","
              << rows.front().weights.g3 << "," << rows.front().weights.g4 << ")\n";
    return 0;
}

int cmd_compare_estimators(const CommonArgs& args, const std::string& corpus_dir,
                           const std::string& sl_prefix, const std::string& nli_prefix,
                           const std::string& lm_prefix) {
    ExperimentConfig cfg = resolve_config(args);
    if (args.seed) cfg.rl.seed = *args.seed;
    start_stage(cfg, args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    pf::Checkpoint sl = require_checkpoint(sl_prefix);
    RewardComponents rc(require_checkpoint(nli_prefix), require_checkpoint(lm_prefix),
                        require_checkpoint(sl_prefix));

    std::vector<pf::Sample> rl_part, tune_part;
    split_rl_tune(split_of(corpus.samples, pf::Split::train), cfg.corpus.seed, rl_part, tune_part);
    const double alpha = resolve_alpha(cfg, rc, sl, tune_part, corpus.vocab);
    const pf::RewardStack stack = rc.stack(cfg, corpus.vocab, alpha);

    std::vector<pf::RlResult> results(2);
    pf::parallel_for(2, cfg.threads, [&](std::size_t i) {
        pf::Params policy = sl.params;
        pf::RlHyper hyper = cfg.rl;
        hyper.algorithm = i == 0 ? pf::RlAlgorithm::actor_critic : pf::RlAlgorithm::reinforce;
        results[i] = pf::train_rl(policy, sl.config, stack, rl_part, hyper);
    });

    std::vector<double> ac_totals, re_totals;
    for (const auto& log : results[0].curve) ac_totals.push_back(log.reward.total);
    for (const auto& log : results[1].curve) re_totals.push_back(log.reward.total);

    pf::write_text_file(args.out_dir + "/curve_ac.csv", pf::reward_curve_csv(results[0].curve));
    pf::write_text_file(args.out_dir + "/curve_reinforce.csv",
                        pf::reward_curve_csv(results[1].curve));
    pf::write_text_file(args.out_dir + "/compare.svg",
                        pf::render_curve_svg("reward per step: actor-critic vs REINFORCE",
                                             {{"actor-critic", ac_totals}, {"reinforce", re_totals}}));

    auto trailing_variance = [](const std::vector<double>& xs, std::size_t window) {
        // mean trailing-window variance over the final quarter of training
        if (xs.size() < window + 1) return 0.0;
        double acc = 0.0;
        long n = 0;
        for (std::size_t end = xs.size() * 3 / 4; end <= xs.size(); ++end) {
            if (end < window) continue;
            double mean = 0.0;
            for (std::size_t i = end - window; i < end; ++i) mean += xs[i];
            mean /= static_cast<double>(window);
            double var = 0.0;
            for (std::size_t i = end - window; i < end; ++i) {
                var += (xs[i] - mean) * (xs[i] - mean);
            }
            acc += var / static_cast<double>(window);
            ++n;
        }
        return n > 0 ? acc / static_cast<double>(n) : 0.0;
    };

    nlohmann::json summary;
    summary["steps"] = ac_totals.size();
    summary["trailing_variance_ac"] = trailing_variance(ac_totals, 200);
    summary["trailing_variance_reinforce"] = trailing_variance(re_totals, 200);
    pf::write_text_file(args.out_dir + "/summary.json", summary.dump(2) + "\n");
    std::cout << "compare-estimators: " << ac_totals.size() << " steps each; trailing variance ac "
              << summary["trailing_variance_ac"].get<double>() << " vs reinforce "
              << summary["trailing_variance_reinforce"].get<double>() << "\n";
    return 0;
}

int cmd_chat(const CommonArgs& args, const std::string& corpus_dir,
             const std::string& policy_prefix, int persona_index) {
    ExperimentConfig cfg = resolve_config(args);
    const CorpusOnDisk corpus = load_corpus_dir(corpus_dir);
    pf::Checkpoint policy = require_checkpoint(policy_prefix);

    std::vector<pf::Persona> personas;
    std::set<std::string> seen;
    for (const pf::Sample& s : corpus.samples) {
        std::string key;
        for (const pf::Fact& f : s.persona.facts) key += f.surface + "|";
        if (seen.insert(key).second) personas.push_back(s.persona);
    }
    if (persona_index < 0 || persona_index >= static_cast<int>(personas.size())) {
        throw std::runtime_error("persona index out of range (have " +
                                 std::to_string(personas.size()) + " personas)");
    }
    const pf::Persona& persona = personas[static_cast<std::size_t>(persona_index)];
    std::cout << "persona:\n";
    for (const pf::Fact& f : persona.facts) std::cout << "  - " << f.surface << "\n";
    std::cout << "(empty line or EOF quits)\n";

    std::vector<std::string> history;
    std::string line;
    std::uint64_t turn = 0;
    const std::uint64_t seed = args.seed ? *args.seed : cfg.eval.gen_seed;
    while (std::cout << "you> " << std::flush, std::getline(std::cin, line)) {
        if (line.empty()) break;
        history.push_back(line);
        pf::Sample s;
        s.persona = persona;
        s.history = history;
        s.reference = "-";
        const std::vector<int> prompt =
            pf::build_prompt(s, corpus.vocab, policy.config.max_seq, cfg.rl.max_response);
        const pf::NgramBlocker blocker =
            pf::blocker_for_sample(s, corpus.vocab, cfg.rl.ngram_block);
        const pf::GenerationResult gen =
            pf::sample_response(policy.params, policy.config, prompt, cfg.rl.max_response,
                                cfg.eval.temperature, blocker, pf::derive_seed(seed, 0xc4a7, turn++));
        std::vector<int> content = gen.ids;
        if (!content.empty() && content.back() == pf::Vocab::kEos) content.pop_back();
        const std::string response = pf::detokenize(content, corpus.vocab);
        std::cout << "bot> " << response << "\n";
        history.push_back(response);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona-forge: persona-consistency RL fine-tuning pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string corpus_dir, sl_prefix, nli_prefix, lm_prefix, policy_prefix, grid_path;
    int persona_index = 0;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
    add_common(gen, args);

    auto* tnli = app.add_subcommand("train-nli", "train the NLI judge");
    add_common(tnli, args);
    tnli->add_option("--corpus", corpus_dir, "corpus directory")->required();

    auto* tlm = app.add_subcommand("train-lm", "train the fluency language model");
    add_common(tlm, args);
    tlm->add_option("--corpus", corpus_dir, "corpus directory")->required();

    auto* tsl = app.add_subcommand("train-sl", "supervised fine-tuning of the policy");
    add_common(tsl, args);
    tsl->add_option("--corpus", corpus_dir, "corpus directory")->required();

    auto* trl = app.add_subcommand("train-rl", "RL fine-tuning of the policy");
    add_common(trl, args);
    trl->add_option("--corpus", corpus_dir, "corpus directory")->required();
    trl->add_option("--sl", sl_prefix, "SL checkpoint prefix")->required();
    trl->add_option("--nli", nli_prefix, "NLI judge checkpoint prefix")->required();
    trl->add_option("--lm", lm_prefix, "fluency LM checkpoint prefix")->required();

    auto* ev = app.add_subcommand("evaluate", "full automatic evaluation of a policy");
    add_common(ev, args);
    ev->add_option("--corpus", corpus_dir, "corpus directory")->required();
    ev->add_option("--policy", policy_prefix, "policy checkpoint prefix")->required();
    ev->add_option("--nli", nli_prefix, "NLI judge checkpoint prefix")->required();
    ev->add_option("--lm", lm_prefix, "fluency LM checkpoint prefix")->required();

    auto* gs = app.add_subcommand("grid-search", "sub-reward weight grid search");
    add_common(gs, args);
    gs->add_option("--corpus", corpus_dir, "corpus directory")->required();
    gs->add_option("--sl", sl_prefix, "SL checkpoint prefix")->required();
    gs->add_option("--nli", nli_prefix, "NLI judge checkpoint prefix")->required();
    gs->add_option("--lm", lm_prefix, "fluency LM checkpoint prefix")->required();
    gs->add_option("--grid", grid_path, "JSON array of weight rows (default: stock grid)");

    auto* ce = app.add_subcommand("compare-estimators", "actor-critic vs REINFORCE curves");
    add_common(ce, args);
    ce->add_option("--corpus", corpus_dir, "corpus directory")->required();
    ce->add_option("--sl", sl_prefix, "SL checkpoint prefix")->required();
    ce->add_option("--nli", nli_prefix, "NLI judge checkpoint prefix")->required();
    ce->add_option("--lm", lm_prefix, "fluency LM checkpoint prefix")->required();

    auto* chat = app.add_subcommand("chat", "interactive REPL against a checkpoint");
    add_common(chat, args, /*needs_out=*/false);
    chat->add_option("--corpus", corpus_dir, "corpus directory")->required();
    chat->add_option("--policy", policy_prefix, "policy checkpoint prefix")->required();
    chat->add_option("--persona-index", persona_index, "persona to impersonate");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_corpus(args);
        if (tnli->parsed()) return cmd_train_nli(args, corpus_dir);
        if (tlm->parsed()) return cmd_train_lm(args, corpus_dir);
        if (tsl->parsed()) return cmd_train_sl(args, corpus_dir);
        if (trl->parsed()) return cmd_train_rl(args, corpus_dir, sl_prefix, nli_prefix, lm_prefix);
        if (ev->parsed()) return cmd_evaluate(args, corpus_dir, policy_prefix, nli_prefix, lm_prefix);
        if (gs->parsed()) {
            return cmd_grid_search(args, corpus_dir, sl_prefix, nli_prefix, lm_prefix, grid_path);
        }
        if (ce->parsed()) {
            return cmd_compare_estimators(args, corpus_dir, sl_prefix, nli_prefix, lm_prefix);
        }
        if (chat->parsed()) return cmd_chat(args, corpus_dir, policy_prefix, persona_index);
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 2;
}
