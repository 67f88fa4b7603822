#include "pf/corpus.hpp"
#include "pf/runio.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace pf;

namespace {

std::set<std::string> trigrams(const std::string& text) {
    const std::vector<std::string> w = split_words(text);
    std::set<std::string> out;
    for (std::size_t i = 0; i + 3 <= w.size(); ++i) {
        out.insert(w[i] + "\x1f" + w[i + 1] + "\x1f" + w[i + 2]);
    }
    return out;
}

Fact synthetic_fact(Attribute attr, const std::string& value, const std::string& surface) {
    Fact f;
    f.attribute = attr;
    f.value = value;
    f.surface = surface;
    return f;
}

std::string temp_path(const std::string& name) { return "tmp_corpus_" + name; }

} // namespace

TEST_CASE("generate_corpus is deterministic") {
    const CorpusBundle a = generate_corpus(7, 10, 2);
    const CorpusBundle b = generate_corpus(7, 10, 2);

    save_samples_jsonl(temp_path("a.jsonl"), a.samples);
    save_samples_jsonl(temp_path("b.jsonl"), b.samples);
    CHECK(read_text_file(temp_path("a.jsonl")) == read_text_file(temp_path("b.jsonl")));
    std::remove(temp_path("a.jsonl").c_str());
    std::remove(temp_path("b.jsonl").c_str());

    REQUIRE(a.nli_examples.size() == b.nli_examples.size());
    for (std::size_t i = 0; i < a.nli_examples.size(); ++i) {
        CHECK(a.nli_examples[i].premise == b.nli_examples[i].premise);
        CHECK(a.nli_examples[i].hypothesis == b.nli_examples[i].hypothesis);
        CHECK(a.nli_examples[i].label == b.nli_examples[i].label);
    }
    CHECK(a.vocab.tokens() == b.vocab.tokens());
}

TEST_CASE("generate_corpus rejects bad arguments") {
    CHECK_THROWS_AS(generate_corpus(1, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(generate_corpus(1, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(generate_corpus(1, 4, 0), std::invalid_argument);
}

TEST_CASE("personas carry 4 or 5 facts over unique attributes") {
    const CorpusBundle bundle = generate_corpus(3, 12, 1);
    for (const Sample& s : bundle.samples) {
        const std::size_t n = s.persona.facts.size();
        CHECK(n >= 4);
        CHECK(n <= 5);
        std::set<Attribute> attrs;
        for (const Fact& f : s.persona.facts) attrs.insert(f.attribute);
        CHECK(attrs.size() == n);
    }
}

TEST_CASE("dialogue structure: alternating turns, non-empty samples") {
    const CorpusBundle bundle = generate_corpus(11, 8, 2);
    for (const Sample& s : bundle.samples) {
        CHECK(!s.history.empty());
        CHECK(!s.reference.empty());
        // persona holder answers on odd 0-based turns
        CHECK(s.history.size() % 2 == 1);
        CHECK(s.history.size() <= 7);
    }
}

TEST_CASE("oracle labels the documented cases") {
    const Fact age40 = synthetic_fact(Attribute::age, "40", "i am 40 years old");
    CHECK(oracle_nli(age40, "sure , i am 40 , i can tell you about myself") == NliLabel::entailment);
    CHECK(oracle_nli(age40, "i 'd love to be friends . i 'm 50 years old") ==
          NliLabel::contradiction);
    CHECK(oracle_nli(age40, "i am 50 years old") == NliLabel::contradiction);

    const Fact hunting = synthetic_fact(Attribute::hobby, "hunting", "i like hunting");
    CHECK(oracle_nli(hunting, "hi how are you doing ?") == NliLabel::neutral);
    CHECK(oracle_nli(hunting, "hunting is my favorite thing") == NliLabel::entailment);
    CHECK(oracle_nli(hunting, "fishing is my favorite thing") == NliLabel::contradiction);

    const Fact pets = synthetic_fact(Attribute::pet_count, "2", "i have 2 dogs");
    CHECK(oracle_nli(pets, "i love to cook , i have 2 dogs") == NliLabel::entailment);

    // freeform facts are never oracle-scored
    const Fact freeform = synthetic_fact(Attribute::freeform, "i like hunting", "i like hunting");
    CHECK(oracle_nli(freeform, "i like hunting") == NliLabel::neutral);
    // empty response is neutral (total function)
    CHECK(oracle_nli(age40, "") == NliLabel::neutral);
}

TEST_CASE("generated NLI examples agree with the oracle and are balanced") {
    const CorpusBundle bundle = generate_corpus(17, 10, 1);
    std::map<std::string, Fact> facts_by_surface;
    for (const Sample& s : bundle.samples) {
        for (const Fact& f : s.persona.facts) facts_by_surface[f.surface] = f;
    }
    std::map<NliLabel, long> counts;
    for (const NliExample& e : bundle.nli_examples) {
        REQUIRE(facts_by_surface.count(e.premise) == 1);
        CHECK(oracle_nli(facts_by_surface[e.premise], e.hypothesis) == e.label);
        ++counts[e.label];
    }
    const double n = static_cast<double>(bundle.nli_examples.size());
    for (const auto& [label, count] : counts) {
        CHECK(static_cast<double>(count) / n == doctest::Approx(1.0 / 3).epsilon(0.10));
    }
}

TEST_CASE("every reference is entailed by exactly one fact or neutral to all") {
    const CorpusBundle bundle = generate_corpus(23, 10, 1);
    for (const Sample& s : bundle.samples) {
        int entailed = 0;
        for (const Fact& f : s.persona.facts) {
            const NliLabel l = oracle_nli(f, s.reference);
            CHECK(l != NliLabel::contradiction);
            if (l == NliLabel::entailment) ++entailed;
        }
        CHECK(entailed <= 1);
    }
}

TEST_CASE("no validation reference appears verbatim in the train split") {
    const CorpusBundle bundle = generate_corpus(29, 15, 2);
    std::set<std::string> train_refs;
    for (const Sample& s : bundle.samples) {
        if (s.split == Split::train) train_refs.insert(s.reference);
    }
    bool has_val = false;
    for (const Sample& s : bundle.samples) {
        if (s.split != Split::validation) continue;
        has_val = true;
        CHECK(train_refs.count(s.reference) == 0);
    }
    CHECK(has_val);
}

TEST_CASE("references never copy a trigram from their own prompt") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const CorpusBundle bundle = generate_corpus(seed, 12, 2);
        for (const Sample& s : bundle.samples) {
            std::set<std::string> blocked;
            for (const Fact& f : s.persona.facts) {
                for (const std::string& t : trigrams(f.surface)) blocked.insert(t);
            }
            for (const std::string& u : s.history) {
                for (const std::string& t : trigrams(u)) blocked.insert(t);
            }
            for (const std::string& t : trigrams(s.reference)) CHECK(blocked.count(t) == 0);
        }
    }
}

TEST_CASE("vocab reserves indices 0-5 and stays within 512 tokens") {
    const Vocab v = Vocab::synthetic();
    CHECK(v.size() <= 512);
    CHECK(v.token(Vocab::kPad) == "<pad>");
    CHECK(v.token(Vocab::kBos) == "<bos>");
    CHECK(v.token(Vocab::kEos) == "<eos>");
    CHECK(v.token(Vocab::kSep) == "<sep>");
    CHECK(v.token(Vocab::kCls) == "<cls>");
    CHECK(v.token(Vocab::kUnk) == "<unk>");
    // bijection over the table
    for (int i = 0; i < v.size(); ++i) CHECK(v.lookup(v.token(i)) == i);

    CHECK_THROWS_AS(Vocab({"<pad>", "<bos>"}), std::invalid_argument);
    CHECK_THROWS_AS(Vocab({"a", "b", "c", "d", "e", "f"}), std::invalid_argument);
}

TEST_CASE("tokenize round-trips normalized in-vocabulary text") {
    const Vocab v = Vocab::synthetic();
    CHECK(tokenize("", v).empty());
    CHECK(detokenize({}, v) == "");

    const std::string text = "I   LIKE hunting";
    CHECK(detokenize(tokenize(text, v), v) == normalize_text(text));
    CHECK(normalize_text(text) == "i like hunting");

    const std::vector<int> unk = tokenize("i like zzzqqq", v);
    REQUIRE(unk.size() == 3);
    CHECK(unk[2] == Vocab::kUnk);

    // round-trip over a sample of generated text
    const CorpusBundle bundle = generate_corpus(5, 4, 1);
    for (const Sample& s : bundle.samples) {
        CHECK(detokenize(tokenize(s.reference, v), v) == normalize_text(s.reference));
    }
}

TEST_CASE("personachat loader maps fields and reports precise errors") {
    const std::string path = temp_path("pc.jsonl");
    {
        std::ofstream out(path);
        out << R"({"persona":["i like hunting"],"history":["hi"],"response":"hello"})" << "\n";
    }
    const std::vector<Sample> samples = load_personachat_jsonl(path);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].persona.facts.size() == 1);
    CHECK(samples[0].persona.facts[0].attribute == Attribute::freeform);
    CHECK(samples[0].persona.facts[0].surface == "i like hunting");
    CHECK(samples[0].history.size() == 1);
    CHECK(samples[0].reference == "hello");

    {
        std::ofstream out(path);
    }
    CHECK(load_personachat_jsonl(path).empty());

    {
        std::ofstream out(path);
        out << R"({"persona":["a"],"history":["hi"]})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_personachat_jsonl(path),
                         doctest::Contains("missing field: response"), std::runtime_error);

    {
        std::ofstream out(path);
        out << R"({"persona":["a"],"history":["hi"],"response":"x"})" << "\n";
        out << "{not json\n";
    }
    CHECK_THROWS_WITH_AS(load_personachat_jsonl(path), doctest::Contains("line 2"),
                         std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_personachat_jsonl(path), std::runtime_error);
}

TEST_CASE("corpus serialization round-trips") {
    const CorpusBundle bundle = generate_corpus(31, 4, 1);
    const std::string sp = temp_path("s.jsonl"), np = temp_path("n.jsonl"), vp = temp_path("v.json");
    save_samples_jsonl(sp, bundle.samples);
    save_nli_jsonl(np, bundle.nli_examples);
    save_vocab_json(vp, bundle.vocab);

    const std::vector<Sample> samples = load_samples_jsonl(sp);
    REQUIRE(samples.size() == bundle.samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(samples[i].reference == bundle.samples[i].reference);
        CHECK(samples[i].history == bundle.samples[i].history);
        CHECK(samples[i].split == bundle.samples[i].split);
        REQUIRE(samples[i].persona.facts.size() == bundle.samples[i].persona.facts.size());
        for (std::size_t f = 0; f < samples[i].persona.facts.size(); ++f) {
            CHECK(samples[i].persona.facts[f].attribute == bundle.samples[i].persona.facts[f].attribute);
            CHECK(samples[i].persona.facts[f].value == bundle.samples[i].persona.facts[f].value);
            CHECK(samples[i].persona.facts[f].surface == bundle.samples[i].persona.facts[f].surface);
        }
    }
    const std::vector<NliExample> nli = load_nli_jsonl(np);
    REQUIRE(nli.size() == bundle.nli_examples.size());
    for (std::size_t i = 0; i < nli.size(); ++i) {
        CHECK(nli[i].premise == bundle.nli_examples[i].premise);
        CHECK(nli[i].hypothesis == bundle.nli_examples[i].hypothesis);
        CHECK(nli[i].label == bundle.nli_examples[i].label);
    }
    CHECK(load_vocab_json(vp).tokens() == bundle.vocab.tokens());
    std::remove(sp.c_str());
    std::remove(np.c_str());
    std::remove(vp.c_str());
}
