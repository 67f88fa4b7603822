#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pf {

enum class Attribute {
    age,
    job,
    pet_count,
    hobby,
    family_status,
    residence,
    freeform, // only produced by the PersonaChat loader
};

enum class Split { train, validation };

enum class NliLabel { entailment, contradiction, neutral };

const char* attribute_name(Attribute a);
Attribute attribute_from_name(const std::string& name);
const char* nli_label_name(NliLabel l);
NliLabel nli_label_from_name(const std::string& name);

// One persona fact. For the six synthetic attributes the surface is derived
// from (attribute, value) through a fixed template table; freeform facts keep
// whatever text the loader saw.
struct Fact {
    Attribute attribute = Attribute::freeform;
    std::string value;
    std::string surface;
};

struct Persona {
    std::vector<Fact> facts;
};

// One training/eval unit: persona + dialogue history + reference response.
struct Sample {
    Persona persona;
    std::vector<std::string> history;
    std::string reference;
    Split split = Split::train;
};

struct NliExample {
    std::string premise;
    std::string hypothesis;
    NliLabel label;
};

// Closed word-level vocabulary. Reserved tokens sit at fixed indices 0-5.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kCls = 4;
    static constexpr int kUnk = 5;

    // tokens must start with the six reserved strings and contain no
    // duplicates; size is capped at 512.
    explicit Vocab(std::vector<std::string> tokens);

    // Vocabulary closed over the synthetic template tables. Independent of
    // corpus size and seed.
    static Vocab synthetic();

    int size() const { return static_cast<int>(tokens_.size()); }
    // UNK for unknown words
    int lookup(const std::string& word) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::vector<std::pair<std::string, int>> index_; // sorted for lookup
};

// lowercase + collapse runs of whitespace
std::string normalize_text(const std::string& text);
std::vector<std::string> split_words(const std::string& text);

std::vector<int> tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

struct CorpusBundle {
    std::vector<Sample> samples;
    std::vector<NliExample> nli_examples;
    Vocab vocab;
};

// Deterministic synthetic persona-dialogue corpus. Same arguments, same
// bytes. Throws std::invalid_argument for n_personas < 2 or
// dialogues_per_persona < 1.
CorpusBundle generate_corpus(std::uint64_t seed, int n_personas, int dialogues_per_persona);

// Rule-based entailment oracle over the structured template tables. Total:
// freeform facts and unmatched responses are neutral.
NliLabel oracle_nli(const Fact& fact, const std::string& response);

// PersonaChat-format loader: one JSON object per line with persona (array of
// strings), history (array of strings), response (string). Facts come back
// with attribute "freeform".
std::vector<Sample> load_personachat_jsonl(const std::string& path);

// JSONL / JSON serialization used by the gen-corpus stage.
void save_samples_jsonl(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_samples_jsonl(const std::string& path);
void save_nli_jsonl(const std::string& path, const std::vector<NliExample>& examples);
std::vector<NliExample> load_nli_jsonl(const std::string& path);
void save_vocab_json(const std::string& path, const Vocab& vocab);
Vocab load_vocab_json(const std::string& path);

} // namespace pf
