#include "pf/eval.hpp"
#include "pf/rng.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace pf;
using pf_test::tiny_config;

TEST_CASE("token_f1 hand cases") {
    CHECK(token_f1("i like hunting", "i like hunting") == doctest::Approx(100.0));
    CHECK(token_f1("aa bb", "cc dd") == doctest::Approx(0.0));
    CHECK(token_f1("a b b", "a b c") == doctest::Approx(200.0 / 3).epsilon(1e-9));
    CHECK(token_f1("", "") == doctest::Approx(100.0));
    CHECK(token_f1("", "a") == doctest::Approx(0.0));
    CHECK(token_f1("a", "") == doctest::Approx(0.0));
}

TEST_CASE("token_f1 is symmetric under argument swap") {
    Rng rng(3);
    const char* words[] = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 500; ++trial) {
        std::string x, y;
        for (std::size_t i = 0; i < 1 + rng.next_below(6); ++i) {
            x += std::string(words[rng.next_below(4)]) + " ";
        }
        for (std::size_t i = 0; i < 1 + rng.next_below(6); ++i) {
            y += std::string(words[rng.next_below(4)]) + " ";
        }
        CHECK(token_f1(x, y) == doctest::Approx(token_f1(y, x)).epsilon(1e-12));
    }
}

TEST_CASE("corpus BLEU hand cases") {
    CHECK(corpus_bleu({"a b c d e"}, {"a b c d e"}) == doctest::Approx(1.0));
    // zero overlap: the add-one smoothing mass vanishes with corpus size
    std::vector<std::string> hyps, refs;
    for (int i = 0; i < 200; ++i) {
        hyps.push_back("x y z w x y z w");
        refs.push_back("a b c d a b c d");
    }
    CHECK(corpus_bleu(hyps, refs) < 1e-3);
    // all modified precisions 1, brevity penalty exp(1 - 5/4)
    CHECK(corpus_bleu({"a b c d"}, {"a b c d e"}) ==
          doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-4));
    CHECK_THROWS_AS(corpus_bleu({"a"}, {"a", "b"}), std::invalid_argument);
    CHECK_THROWS_AS(corpus_bleu({}, {}), std::invalid_argument);
}

TEST_CASE("BLEU brevity: extending a short hypothesis with a matching token helps") {
    const std::string ref = "a b c d e f";
    double prev = corpus_bleu({"a b c"}, {ref});
    for (const char* hyp : {"a b c d", "a b c d e", "a b c d e f"}) {
        const double now = corpus_bleu({hyp}, {ref});
        CHECK(now >= prev - 1e-12);
        prev = now;
    }
    CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("pc arithmetic reproduces the documented frequency pairs") {
    CHECK(pc_from_frequencies(0.1114, 0.0182) == doctest::Approx(9.32).epsilon(0.0006));
    CHECK(pc_from_frequencies(0.1481, 0.0175) == doctest::Approx(13.06).epsilon(0.0005));
    CHECK(std::abs(pc_from_frequencies(0.1114, 0.0182) - 9.32) < 0.005);
    CHECK(std::abs(pc_from_frequencies(0.1481, 0.0175) - 13.06) < 0.005);
    CHECK(pc_from_counts(0, 0, 10) == doctest::Approx(0.0));
    CHECK_THROWS_AS(pc_from_counts(1, 1, 0), std::invalid_argument);
}

TEST_CASE("pc antisymmetry and bounds over randomized label sets") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.next_below(60);
        std::vector<NliLabel> labels(n), swapped(n);
        bool all_entail = true;
        for (std::size_t i = 0; i < n; ++i) {
            const int r = static_cast<int>(rng.next_below(3));
            labels[i] = r == 0 ? NliLabel::entailment
                               : r == 1 ? NliLabel::contradiction : NliLabel::neutral;
            swapped[i] = labels[i] == NliLabel::entailment ? NliLabel::contradiction
                         : labels[i] == NliLabel::contradiction ? NliLabel::entailment
                                                                : NliLabel::neutral;
            all_entail = all_entail && labels[i] == NliLabel::entailment;
        }
        const double pc = pc_of_labels(labels);
        CHECK(pc_of_labels(swapped) == doctest::Approx(-pc).epsilon(1e-12));
        CHECK(pc >= -100.0);
        CHECK(pc <= 100.0);
        CHECK((pc == 100.0) == all_entail);
    }
}

TEST_CASE("repetition rate over response sets") {
    CHECK(repetition_rate({{6, 7, 8}, {9, 10}}) == doctest::Approx(0.0));
    CHECK(repetition_rate({{6, 6}, {7, 7}}) == doctest::Approx(50.0));
    CHECK(repetition_rate({{6, 7}, {8, 8}}) == doctest::Approx(25.0));
}

TEST_CASE("confusion matrix rows are normalized percentages") {
    using CL = ConsistencyLabel;
    const std::vector<CL> a = {CL::consistent, CL::neutral, CL::contradicting, CL::consistent};
    const ConfusionMatrix identity = confusion_matrix(a, a);
    for (int r = 0; r < 3; ++r) {
        CHECK(identity.row_defined[r]);
        CHECK(identity.rows[r][r] == doctest::Approx(100.0));
    }

    const std::vector<CL> single_a = {CL::neutral};
    const std::vector<CL> single_b = {CL::contradicting};
    const ConfusionMatrix single = confusion_matrix(single_a, single_b);
    CHECK(!single.row_defined[0]);
    CHECK(single.row_defined[1]);
    CHECK(!single.row_defined[2]);
    CHECK(single.rows[1][2] == doctest::Approx(100.0));

    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.next_below(40);
        std::vector<CL> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<CL>(rng.next_below(3));
            y[i] = static_cast<CL>(rng.next_below(3));
        }
        const ConfusionMatrix m = confusion_matrix(x, y);
        for (int r = 0; r < 3; ++r) {
            if (!m.row_defined[r]) continue;
            CHECK(m.rows[r][0] + m.rows[r][1] + m.rows[r][2] == doctest::Approx(100.0).epsilon(1e-4));
        }
    }

    CHECK_THROWS_AS(confusion_matrix(a, single_b), std::invalid_argument);
}

TEST_CASE("perplexity of the uniform model equals the vocabulary size") {
    const CorpusBundle bundle = generate_corpus(67, 4, 1);
    const ModelConfig c = tiny_config(bundle.vocab.size());
    const Params uniform(c);
    const double v = static_cast<double>(bundle.vocab.size());

    std::vector<Sample> some(bundle.samples.begin(), bundle.samples.begin() + 4);
    CHECK(perplexity_policy(uniform, c, bundle.vocab, some) == doctest::Approx(v).epsilon(1e-3));
    CHECK(perplexity_lm(uniform, c, bundle.vocab, {"i like hunting", "how old are you ?"}) ==
          doctest::Approx(v).epsilon(1e-3));
    CHECK_THROWS_AS(perplexity_policy(uniform, c, bundle.vocab, {}), std::invalid_argument);

    // perplexity is bounded below by 1
    Params trained(c);
    trained.init_weights(9);
    CHECK(perplexity_policy(trained, c, bundle.vocab, some) >= 1.0);
}

TEST_CASE("mean plausibility aggregation") {
    CHECK(mean_plausibility(std::vector<int>{3, 4, 5}) == doctest::Approx(4.0));
    CHECK(mean_plausibility(std::vector<int>{1}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(mean_plausibility(std::vector<int>{}), std::invalid_argument);
    CHECK_THROWS_AS(mean_plausibility(std::vector<int>{0, 3}), std::invalid_argument);
}

TEST_CASE("full_report is deterministic and satisfies the PC identity") {
    const CorpusBundle bundle = generate_corpus(83, 4, 1);
    const ModelConfig mc = tiny_config(bundle.vocab.size());
    const ModelConfig bc = tiny_config(bundle.vocab.size(), AttnMode::bidirectional);
    Params policy(mc), lm(mc);
    policy.init_weights(4);
    lm.init_weights(5);
    NliJudge judge(bc, Params(bc));
    judge.params.init_weights(6);

    std::vector<Sample> eval_samples(bundle.samples.begin(), bundle.samples.begin() + 6);
    const FullReportOutput a = full_report(policy, mc, judge, lm, mc, eval_samples, bundle.vocab,
                                           99, 10, 3, 1.0, 1);
    const FullReportOutput b = full_report(policy, mc, judge, lm, mc, eval_samples, bundle.vocab,
                                           99, 10, 3, 1.0, 2);
    CHECK(a.report.to_json() == b.report.to_json()); // worker count cannot matter
    CHECK(a.generated == b.generated);

    CHECK(a.report.pc ==
          doctest::Approx(a.report.freq_consistent - a.report.freq_contradicting).epsilon(1e-9));
    CHECK(a.report.n_samples == 6);
    CHECK(a.report.rollup_consistent_pct + a.report.rollup_neutral_pct +
              a.report.rollup_contradicting_pct ==
          doctest::Approx(100.0).epsilon(1e-9));

    // label dump has one row per (sample, fact) pair plus the header
    const long rows = static_cast<long>(std::count(a.label_dump_csv.begin(),
                                                   a.label_dump_csv.end(), '\n'));
    CHECK(rows == a.report.n_pairs + 1);

    // changing the seed changes the generations (sanity, not a contract)
    const FullReportOutput c2 = full_report(policy, mc, judge, lm, mc, eval_samples, bundle.vocab,
                                            100, 10, 3, 1.0, 1);
    CHECK(c2.generated != a.generated);
}
