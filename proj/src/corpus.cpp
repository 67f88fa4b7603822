#include "pf/corpus.hpp"

#include "pf/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pf {

using json = nlohmann::json;

const char* attribute_name(Attribute a) {
    switch (a) {
        case Attribute::age: return "age";
        case Attribute::job: return "job";
        case Attribute::pet_count: return "pet_count";
        case Attribute::hobby: return "hobby";
        case Attribute::family_status: return "family_status";
        case Attribute::residence: return "residence";
        case Attribute::freeform: return "freeform";
    }
    return "freeform";
}

Attribute attribute_from_name(const std::string& name) {
    for (Attribute a : {Attribute::age, Attribute::job, Attribute::pet_count, Attribute::hobby,
                        Attribute::family_status, Attribute::residence, Attribute::freeform}) {
        if (name == attribute_name(a)) return a;
    }
    throw std::runtime_error("unknown attribute name: " + name);
}

const char* nli_label_name(NliLabel l) {
    switch (l) {
        case NliLabel::entailment: return "entailment";
        case NliLabel::contradiction: return "contradiction";
        case NliLabel::neutral: return "neutral";
    }
    return "neutral";
}

NliLabel nli_label_from_name(const std::string& name) {
    for (NliLabel l : {NliLabel::entailment, NliLabel::contradiction, NliLabel::neutral}) {
        if (name == nli_label_name(l)) return l;
    }
    throw std::runtime_error("unknown nli label: " + name);
}

// ---------------------------------------------------------------------------
// Template tables.
//
// Three response-template roles per attribute:
//   fact    - persona fact surfaces
//   entail  - grounded dialogue answers; phrased so that no instance shares a
//             trigram with any fact instance that can sit in the same prompt
//             (n-gram blocking must never ban a reference response)
//   extra   - additional assertion phrasings used only as NLI hypotheses
// Entailment and contradiction NLI hypotheses are drawn from the pooled
// fact+entail+extra set so the two classes differ only in the value slot and
// the judge cannot separate them by phrasing alone.
// ---------------------------------------------------------------------------

namespace {

struct AttrTable {
    Attribute attr;
    std::vector<std::string> values;
    std::vector<std::string> fact_templates;
    std::vector<std::string> entail_templates;
    std::vector<std::string> extra_templates;
    std::vector<std::string> question_templates;
};

const std::vector<AttrTable>& attr_tables() {
    static const std::vector<AttrTable> tables = {
        {Attribute::age,
         {"18", "21", "25", "30", "35", "40", "50", "65", "72"},
         {"i am {} years old", "i 'm {} years old", "my age is {}"},
         {"sure , i am now {}", "i turned {} not long ago", "well , {} is my age"},
         {"i am {}", "last birthday made me {}", "i am already {} , friend"},
         {"how old are you ?", "what is your age ?", "when were you born , roughly ?"}},
        {Attribute::job,
         {"teacher", "mechanic", "nurse", "lawyer", "farmer", "chef", "pilot", "artist", "salesman"},
         {"i work as a {}", "i am a {} by trade", "my profession is {}"},
         {"being a {} pays my bills", "i get paid to be a {}", "the {} life suits me fine"},
         {"my paycheck says {}", "i work as a {} these days", "people call me the {}"},
         {"what do you do for work ?", "what is your job ?", "how do you pay the bills ?"}},
        {Attribute::pet_count,
         {"2", "3", "4", "5", "6", "7", "8", "9"},
         {"i have {} dogs", "there are {} dogs in my house", "i own {} dogs"},
         {"yes , {} dogs live with me", "i keep {} dogs at home", "there happen to be {} dogs here"},
         {"i have {} dogs , remember", "my dog count is {}", "exactly {} dogs follow me around"},
         {"do you have any pets ?", "any animals at your place ?", "how many pets do you keep ?"}},
        {Attribute::hobby,
         {"hunting", "fishing", "painting", "chess", "hiking", "baking", "gardening", "swimming", "dancing"},
         {"i like {}", "i enjoy {} a lot", "my favorite hobby is {}"},
         {"{} is my favorite thing", "i spend weekends {} mostly", "nothing beats {} for me"},
         {"i am hooked on {}", "{} takes up my free time", "i like {} , remember"},
         {"do you have any hobbies ?", "what do you enjoy doing ?", "how do you spend free time ?"}},
        {Attribute::family_status,
         {"single", "married", "divorced", "widowed", "engaged", "separated", "remarried", "unattached"},
         {"i am {}", "i 'm {} these days", "my relationship status is {}"},
         {"{} , that is my status", "i stay {} for now", "call me {} , honestly"},
         {"my status stays {}", "these days i am {}", "{} is what i am"},
         {"are you married or single ?", "do you have a family ?", "what is your relationship status ?"}},
        {Attribute::residence,
         {"boston", "chicago", "denver", "seattle", "austin", "miami", "portland", "nashville", "tucson"},
         {"i live in {}", "my home is in {}", "i am based in {}"},
         {"{} is where i stay", "my place is over in {}", "home for me means {}"},
         {"my mail goes to {}", "{} is my current city", "i live in {} , remember"},
         {"where do you live ?", "what city are you from ?", "where is your home base ?"}},
    };
    return tables;
}

const AttrTable& table_for(Attribute a) {
    for (const AttrTable& t : attr_tables()) {
        if (t.attr == a) return t;
    }
    throw std::logic_error("no template table for attribute");
}

const std::vector<std::string>& greetings() {
    static const std::vector<std::string> v = {
        "hi , how are you doing ?",
        "hello there , how is everything ?",
        "hey , nice to meet you !",
        "good day , what is new ?",
    };
    return v;
}

const std::vector<std::string>& chitchat_questions() {
    static const std::vector<std::string> v = {
        "what else should i know ?",
        "got anything exciting going on ?",
        "any plans for the week ?",
    };
    return v;
}

const std::vector<std::string>& neutral_lines_train() {
    static const std::vector<std::string> v = {
        "ha , that is funny",
        "the weather is lovely today",
        "i see what you mean",
        "oh wow , what a story",
        "hmm , not sure about that",
        "that sounds really nice",
        "you seem like good company",
        "well , life keeps us busy",
        "good question , let me think",
        "time flies when we talk",
        "everyone says that these days",
        "i hear you loud and clear",
        "fair enough , i suppose",
        "no complaints on my end",
        "just taking it easy lately",
        "that made me smile honestly",
    };
    return v;
}

const std::vector<std::string>& neutral_lines_val() {
    static const std::vector<std::string> v = {
        "interesting , go on please",
        "haha , you are quick",
        "right , totally get it",
        "sure sounds like a plan",
        "honestly , who can say",
        "nothing beats a calm evening",
        "that reminds me of home",
        "okay , now i am curious",
    };
    return v;
}

const std::vector<std::string>& answer_tails() {
    static const std::vector<std::string> v = {
        ". what about you ?",
        ". how about yourself ?",
        ". tell me your story",
        ". anyway , keep talking",
        ". your turn now friend",
        ". enough about me though",
        ". ask me anything else",
        ". so that is me",
        ". small world , right ?",
    };
    return v;
}

std::string instantiate(const std::string& tmpl, const std::string& value) {
    const auto pos = tmpl.find("{}");
    if (pos == std::string::npos) return tmpl;
    return tmpl.substr(0, pos) + value + tmpl.substr(pos + 2);
}

// Precomputed assertion instances for the oracle: every pooled template of
// every attribute instantiated with every value.
struct AssertionInstance {
    Attribute attr;
    int value_index;
    std::vector<std::string> tokens;
};

const std::vector<AssertionInstance>& assertion_instances() {
    static const std::vector<AssertionInstance> instances = [] {
        std::vector<AssertionInstance> out;
        for (const AttrTable& t : attr_tables()) {
            std::vector<std::string> pooled = t.fact_templates;
            pooled.insert(pooled.end(), t.entail_templates.begin(), t.entail_templates.end());
            pooled.insert(pooled.end(), t.extra_templates.begin(), t.extra_templates.end());
            for (const std::string& tmpl : pooled) {
                for (std::size_t vi = 0; vi < t.values.size(); ++vi) {
                    out.push_back({t.attr, static_cast<int>(vi),
                                   split_words(instantiate(tmpl, t.values[vi]))});
                }
            }
        }
        return out;
    }();
    return instances;
}

bool contains_subsequence(const std::vector<std::string>& haystack,
                          const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (haystack[i + j] != needle[j]) {
                ok = false;
                break;
            }
        }
        if (ok) return true;
    }
    return false;
}

// Trigram bookkeeping for generation-time blocking checks. Trigrams are
// joined with an unprintable separator so a plain string set suffices.
std::string trigram_key(const std::string& a, const std::string& b, const std::string& c) {
    return a + '\x1f' + b + '\x1f' + c;
}

void add_trigrams(const std::string& text, std::set<std::string>& out) {
    const std::vector<std::string> w = split_words(text);
    for (std::size_t i = 0; i + 3 <= w.size(); ++i) {
        out.insert(trigram_key(w[i], w[i + 1], w[i + 2]));
    }
}

bool shares_trigram(const std::string& text, const std::set<std::string>& blocked) {
    const std::vector<std::string> w = split_words(text);
    for (std::size_t i = 0; i + 3 <= w.size(); ++i) {
        if (blocked.count(trigram_key(w[i], w[i + 1], w[i + 2])) > 0) return true;
    }
    return false;
}

} // namespace

// ---------------------------------------------------------------------------
// text utilities
// ---------------------------------------------------------------------------

std::string normalize_text(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = true; // trims leading whitespace
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(normalize_text(text));
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

namespace {
const std::array<const char*, 6> kReserved = {"<pad>", "<bos>", "<eos>", "<sep>", "<cls>", "<unk>"};
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kReserved.size()) {
        throw std::invalid_argument("vocab must include the six reserved tokens");
    }
    for (std::size_t i = 0; i < kReserved.size(); ++i) {
        if (tokens_[i] != kReserved[i]) {
            throw std::invalid_argument("reserved vocab tokens must occupy indices 0-5");
        }
    }
    if (tokens_.size() > 512) {
        throw std::invalid_argument("vocab size exceeds 512");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        index_.emplace_back(tokens_[i], static_cast<int>(i));
    }
    std::sort(index_.begin(), index_.end());
    for (std::size_t i = 1; i < index_.size(); ++i) {
        if (index_[i].first == index_[i - 1].first) {
            throw std::invalid_argument("duplicate vocab token: " + index_[i].first);
        }
    }
}

int Vocab::lookup(const std::string& word) const {
    auto it = std::lower_bound(index_.begin(), index_.end(), std::make_pair(word, 0));
    if (it != index_.end() && it->first == word) return it->second;
    return kUnk;
}

Vocab Vocab::synthetic() {
    std::set<std::string> words;
    auto add_text = [&words](const std::string& text) {
        for (const std::string& w : split_words(text)) {
            if (w != "{}") words.insert(w);
        }
    };
    for (const AttrTable& t : attr_tables()) {
        for (const std::string& v : t.values) words.insert(v);
        for (const auto* group : {&t.fact_templates, &t.entail_templates, &t.extra_templates,
                                  &t.question_templates}) {
            for (const std::string& tmpl : *group) add_text(instantiate(tmpl, "{}"));
        }
    }
    for (const auto* group : {&greetings(), &chitchat_questions(), &neutral_lines_train(),
                              &neutral_lines_val(), &answer_tails()}) {
        for (const std::string& line : *group) add_text(line);
    }
    std::vector<std::string> tokens(kReserved.begin(), kReserved.end());
    tokens.insert(tokens.end(), words.begin(), words.end());
    return Vocab(std::move(tokens));
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const std::string& w : split_words(text)) ids.push_back(vocab.lookup(w));
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += vocab.token(ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

NliLabel oracle_nli(const Fact& fact, const std::string& response) {
    if (fact.attribute == Attribute::freeform) return NliLabel::neutral;
    const std::vector<std::string> tokens = split_words(response);
    if (tokens.empty()) return NliLabel::neutral;

    const AttrTable& t = table_for(fact.attribute);
    int fact_value = -1;
    for (std::size_t vi = 0; vi < t.values.size(); ++vi) {
        if (t.values[vi] == fact.value) fact_value = static_cast<int>(vi);
    }
    if (fact_value < 0) return NliLabel::neutral; // value outside the table

    bool entailed = false;
    for (const AssertionInstance& inst : assertion_instances()) {
        if (inst.attr != fact.attribute) continue;
        if (!contains_subsequence(tokens, inst.tokens)) continue;
        if (inst.value_index != fact_value) return NliLabel::contradiction;
        entailed = true;
    }
    return entailed ? NliLabel::entailment : NliLabel::neutral;
}

// ---------------------------------------------------------------------------
// corpus generation
// ---------------------------------------------------------------------------

namespace {

Fact make_fact(const AttrTable& t, int value_index, int template_index) {
    Fact f;
    f.attribute = t.attr;
    f.value = t.values[static_cast<std::size_t>(value_index)];
    f.surface = instantiate(t.fact_templates[static_cast<std::size_t>(template_index)], f.value);
    return f;
}

struct DialogueState {
    std::set<std::string> blocked;          // trigrams of facts + history so far
    std::set<std::string> used_lines;       // no utterance text repeats in a dialogue
    std::vector<std::set<int>> used_entail; // per fact index, template indices spent
    std::set<int> used_tails;
};

// Grounded answer for one fact: entail template, optionally decorated with a
// tail. Returns empty string when every variant is blocked or collides with
// the train reference set (validation split only).
std::string pick_grounded_answer(const Persona& persona, int fact_index, DialogueState& st,
                                 Rng& rng, bool avoid_train_refs,
                                 const std::set<std::string>& train_refs) {
    const Fact& fact = persona.facts[static_cast<std::size_t>(fact_index)];
    const AttrTable& t = table_for(fact.attribute);

    std::vector<int> tmpl_order;
    for (int i = 0; i < static_cast<int>(t.entail_templates.size()); ++i) {
        if (st.used_entail[static_cast<std::size_t>(fact_index)].count(i) == 0) {
            tmpl_order.push_back(i);
        }
    }
    rng.shuffle(tmpl_order);

    // tail slot -1 = no tail; tails give validation answers enough surface
    // variety that the no-collision rejection below terminates
    std::vector<int> tail_order = {-1};
    for (int i = 0; i < static_cast<int>(answer_tails().size()); ++i) {
        if (st.used_tails.count(i) == 0) tail_order.push_back(i);
    }
    rng.shuffle(tail_order);
    const bool want_tail = rng.next_double() < 0.5;

    for (int ti : tmpl_order) {
        const std::string core =
            instantiate(t.entail_templates[static_cast<std::size_t>(ti)], fact.value);
        std::vector<int> order = tail_order;
        if (!want_tail) {
            // prefer the bare core but keep tails as fallbacks
            order.erase(std::remove(order.begin(), order.end(), -1), order.end());
            order.insert(order.begin(), -1);
        }
        for (int tail : order) {
            const std::string text =
                tail < 0 ? core : core + " " + answer_tails()[static_cast<std::size_t>(tail)];
            if (st.used_lines.count(text) > 0) continue;
            if (shares_trigram(text, st.blocked)) continue;
            if (avoid_train_refs && train_refs.count(text) > 0) continue;
            st.used_entail[static_cast<std::size_t>(fact_index)].insert(ti);
            if (tail >= 0) st.used_tails.insert(tail);
            return text;
        }
    }
    return {};
}

std::string pick_neutral_answer(Split split, DialogueState& st, Rng& rng,
                                const std::set<std::string>& train_refs) {
    const auto& pool = split == Split::train ? neutral_lines_train() : neutral_lines_val();
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(pool.size()); ++i) order.push_back(i);
    rng.shuffle(order);
    for (int i : order) {
        const std::string& text = pool[static_cast<std::size_t>(i)];
        if (st.used_lines.count(text) > 0) continue;
        if (shares_trigram(text, st.blocked)) continue;
        if (split == Split::validation && train_refs.count(text) > 0) continue;
        return text;
    }
    throw std::logic_error("neutral line pool exhausted; template tables violate trigram disjointness");
}

} // namespace

CorpusBundle generate_corpus(std::uint64_t seed, int n_personas, int dialogues_per_persona) {
    if (n_personas < 2) {
        throw std::invalid_argument(
            "generate_corpus: n_personas must be at least 2 (distractor sampling needs "
            "responses from other samples)");
    }
    if (dialogues_per_persona < 1) {
        throw std::invalid_argument("generate_corpus: dialogues_per_persona must be at least 1");
    }

    Rng rng(seed);
    CorpusBundle bundle{.samples = {}, .nli_examples = {}, .vocab = Vocab::synthetic()};

    // personas: 4 or 5 facts over distinct attributes
    std::vector<Persona> personas;
    for (int p = 0; p < n_personas; ++p) {
        const int n_facts = 4 + static_cast<int>(rng.next_below(2));
        std::vector<int> attr_order = {0, 1, 2, 3, 4, 5};
        rng.shuffle(attr_order);
        Persona persona;
        for (int i = 0; i < n_facts; ++i) {
            const AttrTable& t = attr_tables()[static_cast<std::size_t>(attr_order[i])];
            const int vi = static_cast<int>(rng.next_below(t.values.size()));
            const int ti = static_cast<int>(rng.next_below(t.fact_templates.size()));
            persona.facts.push_back(make_fact(t, vi, ti));
        }
        personas.push_back(std::move(persona));
    }

    // last fifth of personas (at least one) forms the validation split, so
    // train dialogues are generated first and the no-verbatim-overlap check
    // for validation references can see the complete train reference set
    const int n_val = std::max(1, n_personas / 5);
    const int n_train = n_personas - n_val;

    std::set<std::string> train_refs;
    for (int p = 0; p < n_personas; ++p) {
        const Split split = p < n_train ? Split::train : Split::validation;
        const Persona& persona = personas[static_cast<std::size_t>(p)];
        for (int d = 0; d < dialogues_per_persona; ++d) {
            const int n_turns = 6 + static_cast<int>(rng.next_below(3));

            DialogueState st;
            st.used_entail.assign(persona.facts.size(), {});
            for (const Fact& f : persona.facts) add_trigrams(f.surface, st.blocked);

            std::vector<int> ask_order;
            for (int i = 0; i < static_cast<int>(persona.facts.size()); ++i) ask_order.push_back(i);
            rng.shuffle(ask_order);
            std::size_t ask_cursor = 0;

            std::vector<std::string> turns;
            int pending_fact = -1;
            for (int turn = 0; turn < n_turns; ++turn) {
                std::string text;
                if (turn % 2 == 0) {
                    // dialogue partner
                    pending_fact = -1;
                    if (turn == 0) {
                        text = greetings()[rng.next_below(greetings().size())];
                    } else if (ask_cursor < ask_order.size() && rng.next_double() < 0.8) {
                        pending_fact = ask_order[ask_cursor++];
                        const Fact& f = persona.facts[static_cast<std::size_t>(pending_fact)];
                        const AttrTable& t = table_for(f.attribute);
                        text = t.question_templates[rng.next_below(t.question_templates.size())];
                    } else {
                        text = chitchat_questions()[rng.next_below(chitchat_questions().size())];
                        while (st.used_lines.count(text) > 0) {
                            text = chitchat_questions()[rng.next_below(chitchat_questions().size())];
                        }
                    }
                } else {
                    // persona holder: ground a uniformly chosen fact w.p. 0.7,
                    // otherwise chit-chat
                    const bool ground = rng.next_double() < 0.7;
                    if (ground) {
                        const int fi = pending_fact >= 0
                                           ? pending_fact
                                           : static_cast<int>(rng.next_below(persona.facts.size()));
                        text = pick_grounded_answer(persona, fi, st, rng,
                                                    split == Split::validation, train_refs);
                    }
                    if (text.empty()) {
                        text = pick_neutral_answer(split, st, rng, train_refs);
                    }
                    Sample sample;
                    sample.persona = persona;
                    sample.history = turns;
                    sample.reference = text;
                    sample.split = split;
                    bundle.samples.push_back(std::move(sample));
                    if (split == Split::train) train_refs.insert(text);
                }
                st.used_lines.insert(text);
                add_trigrams(text, st.blocked);
                turns.push_back(std::move(text));
            }
        }
    }

    // Balanced NLI triples: one entailment, one contradiction, one neutral
    // per (fact, repeat). Hypotheses for the first two classes come from the
    // pooled assertion templates so the only class signal is the value slot.
    // Six repeats give the judge enough coverage of the template-value space
    // to learn value comparison rather than phrasing shortcuts.
    const int nli_repeats = 6;
    for (const Persona& persona : personas) {
        for (const Fact& fact : persona.facts) {
            const AttrTable& t = table_for(fact.attribute);
            std::vector<std::string> pooled = t.fact_templates;
            pooled.insert(pooled.end(), t.entail_templates.begin(), t.entail_templates.end());
            pooled.insert(pooled.end(), t.extra_templates.begin(), t.extra_templates.end());

            // the fact's own template yields minimal pairs that differ from
            // the premise only in the value slot
            std::string own_template;
            for (const std::string& tmpl : t.fact_templates) {
                if (instantiate(tmpl, fact.value) == fact.surface) own_template = tmpl;
            }

            for (int rep = 0; rep < nli_repeats; ++rep) {
                auto maybe_tail = [&rng](std::string text) {
                    if (rng.next_double() < 0.3) {
                        text += " " + answer_tails()[rng.next_below(answer_tails().size())];
                    }
                    return text;
                };

                const bool minimal_pair = rep == 0 && !own_template.empty();
                const std::string& tmpl_e =
                    minimal_pair ? own_template : pooled[rng.next_below(pooled.size())];
                bundle.nli_examples.push_back(
                    {fact.surface,
                     minimal_pair ? instantiate(tmpl_e, fact.value)
                                  : maybe_tail(instantiate(tmpl_e, fact.value)),
                     NliLabel::entailment});

                const std::string& tmpl_c =
                    minimal_pair ? own_template : pooled[rng.next_below(pooled.size())];
                std::string other = fact.value;
                while (other == fact.value) {
                    other = t.values[rng.next_below(t.values.size())];
                }
                bundle.nli_examples.push_back(
                    {fact.surface,
                     minimal_pair ? instantiate(tmpl_c, other)
                                  : maybe_tail(instantiate(tmpl_c, other)),
                     NliLabel::contradiction});

                std::string hyp_n;
                if (rng.next_double() < 0.5) {
                    // assertion about an unrelated attribute
                    const AttrTable* other_table = &attr_tables()[rng.next_below(attr_tables().size())];
                    while (other_table->attr == fact.attribute) {
                        other_table = &attr_tables()[rng.next_below(attr_tables().size())];
                    }
                    std::vector<std::string> other_pool = other_table->fact_templates;
                    other_pool.insert(other_pool.end(), other_table->entail_templates.begin(),
                                      other_table->entail_templates.end());
                    other_pool.insert(other_pool.end(), other_table->extra_templates.begin(),
                                      other_table->extra_templates.end());
                    hyp_n = maybe_tail(
                        instantiate(other_pool[rng.next_below(other_pool.size())],
                                    other_table->values[rng.next_below(other_table->values.size())]));
                } else {
                    const auto& pool =
                        rng.next_double() < 0.5 ? neutral_lines_train() : neutral_lines_val();
                    hyp_n = pool[rng.next_below(pool.size())];
                }
                bundle.nli_examples.push_back({fact.surface, hyp_n, NliLabel::neutral});
            }
        }
    }
    rng.shuffle(bundle.nli_examples);

    for (const NliExample& ex : bundle.nli_examples) {
        Fact premise_fact;
        bool found = false;
        for (const Persona& persona : personas) {
            for (const Fact& f : persona.facts) {
                if (f.surface == ex.premise) {
                    premise_fact = f;
                    found = true;
                }
            }
        }
        if (!found || oracle_nli(premise_fact, ex.hypothesis) != ex.label) {
            throw std::logic_error("generated NLI example disagrees with the oracle: " +
                                   ex.premise + " / " + ex.hypothesis);
        }
    }

    return bundle;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {

bool numeric_attribute(Attribute a) {
    return a == Attribute::age || a == Attribute::pet_count;
}

json fact_to_json(const Fact& f) {
    json j;
    j["attribute"] = attribute_name(f.attribute);
    if (numeric_attribute(f.attribute)) {
        j["value"] = std::stoll(f.value);
    } else {
        j["value"] = f.value;
    }
    j["surface"] = f.surface;
    return j;
}

Fact fact_from_json(const json& j) {
    Fact f;
    f.attribute = attribute_from_name(j.at("attribute").get<std::string>());
    const json& v = j.at("value");
    f.value = v.is_number_integer() ? std::to_string(v.get<long long>()) : v.get<std::string>();
    f.surface = j.at("surface").get<std::string>();
    return f;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

} // namespace

void save_samples_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out = open_out(path);
    for (const Sample& s : samples) {
        json j;
        json persona = json::array();
        for (const Fact& f : s.persona.facts) persona.push_back(fact_to_json(f));
        j["persona"] = std::move(persona);
        j["history"] = s.history;
        j["response"] = s.reference;
        j["split"] = s.split == Split::train ? "train" : "validation";
        out << j.dump() << '\n';
    }
}

std::vector<Sample> load_samples_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<Sample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line);
        Sample s;
        for (const json& fj : j.at("persona")) s.persona.facts.push_back(fact_from_json(fj));
        s.history = j.at("history").get<std::vector<std::string>>();
        s.reference = j.at("response").get<std::string>();
        s.split = j.at("split").get<std::string>() == "validation" ? Split::validation : Split::train;
        (void)line_no;
        samples.push_back(std::move(s));
    }
    return samples;
}

void save_nli_jsonl(const std::string& path, const std::vector<NliExample>& examples) {
    std::ofstream out = open_out(path);
    for (const NliExample& e : examples) {
        json j;
        j["premise"] = e.premise;
        j["hypothesis"] = e.hypothesis;
        j["label"] = nli_label_name(e.label);
        out << j.dump() << '\n';
    }
}

std::vector<NliExample> load_nli_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<NliExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        out.push_back({j.at("premise").get<std::string>(), j.at("hypothesis").get<std::string>(),
                       nli_label_from_name(j.at("label").get<std::string>())});
    }
    return out;
}

void save_vocab_json(const std::string& path, const Vocab& vocab) {
    std::ofstream out = open_out(path);
    out << json(vocab.tokens()).dump() << '\n';
}

Vocab load_vocab_json(const std::string& path) {
    std::ifstream in = open_in(path);
    json j;
    in >> j;
    return Vocab(j.get<std::vector<std::string>>());
}

std::vector<Sample> load_personachat_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<Sample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "personachat jsonl line " + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error(where + "malformed JSON (" + e.what() + ")");
        }
        for (const char* field : {"persona", "history", "response"}) {
            if (!j.contains(field)) {
                throw std::runtime_error(where + "missing field: " + field);
            }
        }
        Sample s;
        try {
            for (const json& fj : j.at("persona")) {
                Fact f;
                f.attribute = Attribute::freeform;
                f.value = fj.get<std::string>();
                f.surface = f.value;
                s.persona.facts.push_back(std::move(f));
            }
            s.history = j.at("history").get<std::vector<std::string>>();
            s.reference = j.at("response").get<std::string>();
        } catch (const json::exception& e) {
            throw std::runtime_error(where + "bad field type (" + e.what() + ")");
        }
        if (s.history.empty()) throw std::runtime_error(where + "history must be non-empty");
        if (s.reference.empty()) throw std::runtime_error(where + "response must be non-empty");
        s.split = Split::train;
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace pf
