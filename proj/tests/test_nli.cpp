#include "pf/nli.hpp"
#include "pf/rng.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

using namespace pf;
using pf_test::tiny_config;

namespace {

NliJudge random_judge(const Vocab& vocab, std::uint64_t seed) {
    ModelConfig c;
    c.vocab_size = vocab.size();
    c.mode = AttnMode::bidirectional;
    NliJudge judge(c, Params(c));
    judge.params.init_weights(seed);
    return judge;
}

// stub judge keyed by fact surface
NliJudgeFn stub_judge(std::map<std::string, NliProbs> table) {
    return [table = std::move(table)](const std::string& fact, const std::string&) {
        auto it = table.find(fact);
        return it == table.end() ? NliProbs{0.0, 0.0, 1.0} : it->second;
    };
}

Persona persona_of(const std::vector<std::string>& surfaces) {
    Persona p;
    for (const std::string& s : surfaces) {
        Fact f;
        f.attribute = Attribute::freeform;
        f.value = s;
        f.surface = s;
        p.facts.push_back(std::move(f));
    }
    return p;
}

} // namespace

TEST_CASE("score_nli returns a proper distribution") {
    const Vocab vocab = Vocab::synthetic();
    const NliJudge judge = random_judge(vocab, 17);
    for (const char* resp : {"i like hunting", "sure , i am now 40", "zzz unknown words"}) {
        const NliProbs p = score_nli(judge, "i am 40 years old", resp, vocab);
        CHECK(p.p_e + p.p_c + p.p_n == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(p.p_e >= 0.0);
        CHECK(p.p_c >= 0.0);
        CHECK(p.p_n >= 0.0);
    }
}

TEST_CASE("score_nli ignores trailing whitespace") {
    const Vocab vocab = Vocab::synthetic();
    const NliJudge judge = random_judge(vocab, 18);
    const NliProbs a = score_nli(judge, "i like hunting", "sure , i am now 40", vocab);
    const NliProbs b = score_nli(judge, "i like hunting", "  sure , i am now 40   ", vocab);
    CHECK(a.p_e == b.p_e);
    CHECK(a.p_c == b.p_c);
    CHECK(a.p_n == b.p_n);
}

TEST_CASE("r1 formula endpoints and hand-computed case") {
    const Persona one = persona_of({"f"});
    CHECK(r1_consistency(stub_judge({{"f", {1.0, 0.0, 0.0}}}), one, "r", 2.0) ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r1_consistency(stub_judge({{"f", {0.0, 1.0, 0.0}}}), one, "r", 2.0) ==
          doctest::Approx(-2.0).epsilon(1e-9));

    const Persona four = persona_of({"f1", "f2", "f3", "f4"});
    const NliJudgeFn judge = stub_judge({{"f1", {0.8, 0.1, 0.1}},
                                         {"f2", {0.1, 0.0, 0.9}},
                                         {"f3", {0.0, 0.6, 0.4}},
                                         {"f4", {0.1, 0.0, 0.9}}});
    CHECK(r1_consistency(judge, four, "r", 2.0) == doctest::Approx(-0.10).epsilon(1e-9));
}

TEST_CASE("r1 argument validation") {
    CHECK_THROWS_AS(r1_consistency(stub_judge({}), Persona{}, "r", 2.0), std::invalid_argument);
    CHECK_THROWS_AS(r1_consistency(stub_judge({}), persona_of({"f"}), "r", 0.5),
                    std::invalid_argument);
}

TEST_CASE("r1 is monotone in the class probabilities and bounded") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(5));
        std::vector<std::string> names;
        std::map<std::string, NliProbs> table;
        for (int i = 0; i < n; ++i) {
            names.push_back("f" + std::to_string(i));
            double e = rng.next_double(), c = rng.next_double(), z = rng.next_double();
            const double s = e + c + z + 1e-12;
            table[names.back()] = {e / s, c / s, z / s};
        }
        const double beta = 1.0 + 3.0 * rng.next_double();
        const Persona p = persona_of(names);
        const double base = r1_consistency(stub_judge(table), p, "r", beta);
        CHECK(base >= -beta - 1e-12);
        CHECK(base <= 1.0 + 1e-12);

        // bump one entailment probability (mass from neutral)
        auto bumped = table;
        const std::string& pick = names[rng.next_below(names.size())];
        const double room = bumped[pick].p_n;
        bumped[pick].p_e += 0.5 * room;
        bumped[pick].p_n -= 0.5 * room;
        CHECK(r1_consistency(stub_judge(bumped), p, "r", beta) >= base - 1e-12);

        // bump one contradiction probability instead
        auto worse = table;
        const double room2 = worse[pick].p_n;
        worse[pick].p_c += 0.5 * room2;
        worse[pick].p_n -= 0.5 * room2;
        CHECK(r1_consistency(stub_judge(worse), p, "r", beta) <= base + 1e-12);
    }
}

TEST_CASE("r1 is invariant to persona fact order") {
    const std::map<std::string, NliProbs> table = {
        {"a", {0.7, 0.1, 0.2}}, {"b", {0.2, 0.5, 0.3}}, {"c", {0.05, 0.05, 0.9}}};
    const double x = r1_consistency(stub_judge(table), persona_of({"a", "b", "c"}), "r", 2.0);
    const double y = r1_consistency(stub_judge(table), persona_of({"c", "a", "b"}), "r", 2.0);
    CHECK(x == doctest::Approx(y).epsilon(1e-12));
}

TEST_CASE("train_nli rejects degenerate class distributions") {
    const Vocab vocab = Vocab::synthetic();
    const ModelConfig c = tiny_config(vocab.size(), AttnMode::bidirectional);
    std::vector<NliExample> only_entail(20, {"i like hunting", "hunting is my favorite thing",
                                             NliLabel::entailment});
    NliHyper hyper;
    hyper.epochs = 1;
    CHECK_THROWS_AS(train_nli(only_entail, c, hyper, vocab, nullptr), std::invalid_argument);

    ModelConfig causal = c;
    causal.mode = AttnMode::causal;
    const CorpusBundle bundle = generate_corpus(3, 4, 1);
    CHECK_THROWS_AS(train_nli(bundle.nli_examples, causal, hyper, vocab, nullptr),
                    std::invalid_argument);
}

TEST_CASE("an untrained judge sits at chance on a balanced set") {
    const CorpusBundle bundle = generate_corpus(41, 8, 1);
    const NliJudge judge = random_judge(bundle.vocab, 23);
    // the generated example stream is balanced by construction
    const double acc = heldout_accuracy(judge, bundle.nli_examples, bundle.vocab);
    CHECK(acc == doctest::Approx(1.0 / 3).epsilon(0.31)); // 1/3 +- 0.1 absolute
    CHECK(std::abs(acc - 1.0 / 3) <= 0.1);
}

TEST_CASE("a briefly trained judge beats the majority floor") {
    const CorpusBundle bundle = generate_corpus(43, 8, 1);
    ModelConfig c;
    c.vocab_size = bundle.vocab.size();
    c.mode = AttnMode::bidirectional;
    NliHyper hyper;
    hyper.epochs = 6;
    hyper.lr = 2e-3;
    hyper.seed = 3;
    NliReport report;
    train_nli(bundle.nli_examples, c, hyper, bundle.vocab, &report);
    CHECK(report.heldout_accuracy > 1.0 / 3);
    CHECK(report.n_heldout > 0);
    long confusion_total = 0;
    for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) confusion_total += report.confusion[r][col];
    }
    CHECK(confusion_total == report.n_heldout);
}
