#include "pf/model.hpp"
#include "pf/rng.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

using namespace pf;
using pf_test::tiny_config;

TEST_CASE("forward validates its inputs") {
    const ModelConfig c = tiny_config();
    Params p(c);
    p.init_weights(1);
    CHECK_THROWS_AS(forward(p, c, std::vector<int>{}), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, c, std::vector<int>(65, 6)), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, c, std::vector<int>{6, 99}), std::invalid_argument);
}

TEST_CASE("causal logits depend only on the left context, bit for bit") {
    const ModelConfig c = tiny_config();
    Params p(c);
    p.init_weights(2);
    std::vector<int> ids = {1, 6, 7, 8, 9, 10};
    const ForwardTrace a = forward(p, c, ids);
    ids[4] = 11; // perturb position 4
    const ForwardTrace b = forward(p, c, ids);
    for (int t = 0; t < 4; ++t) {
        for (int j = 0; j < c.vocab_size; ++j) {
            CHECK(a.logits[static_cast<std::size_t>(t) * c.vocab_size + j] ==
                  b.logits[static_cast<std::size_t>(t) * c.vocab_size + j]);
        }
    }
    // and the perturbed suffix does change
    bool changed = false;
    for (int j = 0; j < c.vocab_size; ++j) {
        changed = changed || a.logits[4ull * c.vocab_size + j] != b.logits[4ull * c.vocab_size + j];
    }
    CHECK(changed);
}

TEST_CASE("softmax of every logit row sums to one") {
    const ModelConfig c = tiny_config();
    Params p(c);
    p.init_weights(3);
    const std::vector<int> ids = {1, 6, 7, 8};
    const ForwardTrace tr = forward(p, c, ids);
    std::vector<double> logp(static_cast<std::size_t>(c.vocab_size));
    for (int t = 0; t < tr.T; ++t) {
        log_softmax_row(tr.logits.data() + static_cast<std::size_t>(t) * c.vocab_size,
                        c.vocab_size, logp.data());
        double sum = 0.0;
        for (double lp : logp) sum += std::exp(lp);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("forward is pure") {
    const ModelConfig c = tiny_config();
    Params p(c);
    p.init_weights(4);
    const std::vector<int> ids = {1, 7, 9, 11};
    const ForwardTrace a = forward(p, c, ids);
    const ForwardTrace b = forward(p, c, ids);
    CHECK(a.logits == b.logits);
    CHECK(a.hidden == b.hidden);
}

TEST_CASE("log-softmax survives adversarial logits") {
    std::vector<double> row = {1e4, -1e4, 0.0, 9999.5, -9999.5};
    std::vector<double> out(row.size());
    log_softmax_row(row.data(), static_cast<int>(row.size()), out.data());
    double sum = 0.0;
    for (double lp : out) {
        CHECK(std::isfinite(lp));
        sum += std::exp(lp);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("nll_loss on an all-zero model equals log vocab size") {
    ModelConfig c = tiny_config(8);
    Params p(c); // zero parameters leave every logit at zero
    const std::vector<int> ids = {1, 6, 7, 6};
    const std::vector<std::uint8_t> mask = {0, 1, 1, 1};
    CHECK(nll_loss(p, c, ids, mask, nullptr) == doctest::Approx(std::log(8.0)).epsilon(1e-4));
}

TEST_CASE("nll_loss matches an independent softmax computation") {
    const ModelConfig c = tiny_config(9);
    Params p(c);
    p.init_weights(5);
    const std::vector<int> ids = {1, 6, 7, 8, 6};
    const std::vector<std::uint8_t> mask = {0, 0, 1, 1, 1};

    const ForwardTrace tr = forward(p, c, ids);
    double expected = 0.0;
    int n = 0;
    for (std::size_t k = 2; k < ids.size(); ++k) {
        const double* row = tr.logits.data() + (k - 1) * static_cast<std::size_t>(c.vocab_size);
        double mx = row[0];
        for (int j = 1; j < c.vocab_size; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < c.vocab_size; ++j) denom += std::exp(row[j] - mx);
        expected -= row[ids[k]] - mx - std::log(denom);
        ++n;
    }
    expected /= n;
    CHECK(nll_loss(p, c, ids, mask, nullptr) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(nll_loss(p, c, ids, std::vector<std::uint8_t>(5, 0), nullptr),
                    std::invalid_argument);
    CHECK_THROWS_AS(nll_loss(p, c, ids, std::vector<std::uint8_t>{1, 0, 0, 0, 0}, nullptr),
                    std::invalid_argument);
}

TEST_CASE("ngram blocker bans completions of observed grams") {
    NgramBlocker b({{6, 7, 8}, {7, 8, 9, 10}}, 3);
    CHECK(b.banned_tokens(std::vector<int>{6, 7}) == std::vector<int>{8});
    CHECK(b.banned_tokens(std::vector<int>{11, 6, 7}) == std::vector<int>{8});
    CHECK(b.banned_tokens(std::vector<int>{7, 8}) == std::vector<int>{9});
    CHECK(b.banned_tokens(std::vector<int>{8, 9}) == std::vector<int>{10});
    CHECK(b.banned_tokens(std::vector<int>{6, 8}).empty());
    CHECK(b.banned_tokens(std::vector<int>{}).empty());

    NgramBlocker uni;
    uni.add(std::vector<int>{7});
    CHECK(uni.banned_tokens(std::vector<int>{}) == std::vector<int>{7});
    CHECK(uni.banned_tokens(std::vector<int>{9, 9, 9}) == std::vector<int>{7});
}

TEST_CASE("sample_response honors its contracts") {
    const ModelConfig c = tiny_config(12);
    Params p(c);
    p.init_weights(6);
    const std::vector<int> prompt = {1, 6, 7, 3};

    SUBCASE("max_new 0 gives an empty response") {
        const GenerationResult g = sample_response(p, c, prompt, 0, 1.0, {}, 1);
        CHECK(g.ids.empty());
        CHECK(g.logprobs.empty());
        CHECK(g.hidden.empty());
    }
    SUBCASE("same seed, same response") {
        const GenerationResult a = sample_response(p, c, prompt, 12, 0.9, {}, 42);
        const GenerationResult b = sample_response(p, c, prompt, 12, 0.9, {}, 42);
        CHECK(a.ids == b.ids);
        CHECK(a.logprobs == b.logprobs);
        CHECK(a.hidden == b.hidden);
    }
    SUBCASE("blocking every unigram forces EOS") {
        NgramBlocker all;
        for (int t = 0; t < c.vocab_size; ++t) all.add(std::vector<int>{t});
        const GenerationResult g = sample_response(p, c, prompt, 10, 1.0, all, 7);
        CHECK(g.ids == std::vector<int>{2});
        CHECK(g.logprobs == std::vector<double>{0.0});
    }
    SUBCASE("reserved tokens other than EOS are never emitted") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            const GenerationResult g = sample_response(p, c, prompt, 20, 1.3, {}, seed);
            for (std::size_t k = 0; k < g.ids.size(); ++k) {
                const bool last = k + 1 == g.ids.size();
                if (g.ids[k] < 6) {
                    CHECK(g.ids[k] == 2);
                    CHECK(last);
                }
            }
            CHECK(g.ids.size() <= 20);
        }
    }
    SUBCASE("emitted trigrams never come from the blocked set") {
        std::vector<std::vector<int>> sources = {{6, 7, 8, 9}, {10, 11, 6}};
        const NgramBlocker blocker(sources, 3);
        std::set<std::vector<int>> blocked;
        for (const auto& s : sources) {
            for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
                blocked.insert({s[i], s[i + 1], s[i + 2]});
            }
        }
        for (std::uint64_t seed = 0; seed < 16; ++seed) {
            const GenerationResult g = sample_response(p, c, prompt, 20, 1.0, blocker, seed);
            for (std::size_t i = 0; i + 3 <= g.ids.size(); ++i) {
                CHECK(blocked.count({g.ids[i], g.ids[i + 1], g.ids[i + 2]}) == 0);
            }
        }
    }
    SUBCASE("recomputed log-probs match the sampling bookkeeping") {
        const NgramBlocker blocker({{6, 7, 8}}, 2);
        const GenerationResult g = sample_response(p, c, prompt, 15, 0.8, blocker, 5);
        const std::vector<double> again = recompute_logprobs(p, c, prompt, g);
        REQUIRE(again.size() == g.logprobs.size());
        for (std::size_t k = 0; k < again.size(); ++k) {
            CHECK(again[k] == doctest::Approx(g.logprobs[k]).epsilon(1e-6));
        }
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(sample_response(p, c, prompt, 21, 1.0, {}, 1), std::invalid_argument);
        CHECK_THROWS_AS(sample_response(p, c, prompt, 5, 0.0, {}, 1), std::invalid_argument);
        CHECK_THROWS_AS(sample_response(p, c, std::vector<int>{}, 5, 1.0, {}, 1),
                        std::invalid_argument);
    }
}

TEST_CASE("encode_cls returns the CLS state of a bidirectional encoder") {
    const ModelConfig c = tiny_config(12, AttnMode::bidirectional);
    Params p(c);
    p.init_weights(8);

    const std::vector<double> only_cls = encode_cls(p, c, std::vector<int>{4});
    CHECK(static_cast<int>(only_cls.size()) == c.d_model);
    for (double v : only_cls) CHECK(std::isfinite(v));

    CHECK_THROWS_AS(encode_cls(p, c, std::vector<int>{6, 7}), std::invalid_argument);

    // bidirectional attention makes the CLS state sensitive to token order
    // after the separator
    const std::vector<double> a = encode_cls(p, c, std::vector<int>{4, 6, 3, 7, 8});
    const std::vector<double> b = encode_cls(p, c, std::vector<int>{4, 6, 3, 8, 7});
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i] != b[i];
    CHECK(differs);

    const std::vector<double> again = encode_cls(p, c, std::vector<int>{4, 6, 3, 7, 8});
    CHECK(a == again);
}

TEST_CASE("mean_pool_embed averages raw embedding rows") {
    const ModelConfig c = tiny_config();
    Params p(c);
    p.init_weights(9);
    const int d = c.d_model;
    const double* e6 = p.tok_emb() + 6 * d;
    const double* e7 = p.tok_emb() + 7 * d;

    const std::vector<double> single = mean_pool_embed(p, c, std::vector<int>{6});
    for (int i = 0; i < d; ++i) CHECK(single[static_cast<std::size_t>(i)] == e6[i]);

    const std::vector<double> twice = mean_pool_embed(p, c, std::vector<int>{6, 6});
    for (int i = 0; i < d; ++i) {
        CHECK(twice[static_cast<std::size_t>(i)] == doctest::Approx(e6[i]).epsilon(1e-15));
    }

    const std::vector<double> pair = mean_pool_embed(p, c, std::vector<int>{6, 7});
    for (int i = 0; i < d; ++i) {
        CHECK(pair[static_cast<std::size_t>(i)] ==
              doctest::Approx((e6[i] + e7[i]) / 2.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(mean_pool_embed(p, c, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("adam_step contracts") {
    const ModelConfig c = tiny_config();

    SUBCASE("zero gradient leaves parameters unchanged") {
        Params p(c);
        p.init_weights(10);
        const std::vector<double> before(p.data(), p.data() + p.size());
        AdamState st;
        adam_step(p, std::vector<double>(p.size(), 0.0), st, 0.1);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.data()[i] == before[i]);
    }
    SUBCASE("first step with unit gradient moves by about lr") {
        Params p(c);
        p.init_weights(11);
        std::vector<double> g(p.size(), 0.0);
        const std::size_t target = 5;
        g[target] = 1.0;
        const double before = p.data()[target];
        AdamState st;
        adam_step(p, g, st, 0.1);
        CHECK(before - p.data()[target] == doctest::Approx(0.1).epsilon(1e-6));
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (i != target) CHECK(p.data()[i] == doctest::Approx(p.data()[i]));
        }
    }
    SUBCASE("identical runs give identical trajectories") {
        Params p1(c), p2(c);
        p1.init_weights(12);
        p2.init_weights(12);
        AdamState s1, s2;
        Rng rng(3);
        for (int step = 0; step < 5; ++step) {
            std::vector<double> g(p1.size());
            for (double& x : g) x = rng.next_double() - 0.5;
            adam_step(p1, g, s1, 0.01);
            adam_step(p2, g, s2, 0.01);
        }
        for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1.data()[i] == p2.data()[i]);
    }
    SUBCASE("non-finite gradients abort") {
        Params p(c);
        p.init_weights(13);
        std::vector<double> g(p.size(), 0.0);
        g[0] = std::numeric_limits<double>::quiet_NaN();
        AdamState st;
        CHECK_THROWS_AS(adam_step(p, g, st, 0.1), std::runtime_error);
    }
}

TEST_CASE("checkpoints round-trip through the f32 manifest format") {
    const ModelConfig c = tiny_config(10);
    Params p(c);
    p.init_weights(14);

    save_checkpoint("tmp_ckpt_model", p, "sl");
    const Checkpoint loaded = load_checkpoint("tmp_ckpt_model");
    CHECK(loaded.tag == "sl");
    CHECK(loaded.config.vocab_size == 10);
    CHECK(loaded.config.mode == AttnMode::causal);
    REQUIRE(loaded.params.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(loaded.params.data()[i] == static_cast<double>(static_cast<float>(p.data()[i])));
    }

    // saving the loaded params again reproduces the blob byte for byte
    save_checkpoint("tmp_ckpt_model2", loaded.params, "sl");
    CHECK(pf::load_checkpoint("tmp_ckpt_model2").params.data()[3] == loaded.params.data()[3]);

    CHECK_THROWS_AS(load_checkpoint("tmp_ckpt_missing"), std::runtime_error);
    for (const char* f : {"tmp_ckpt_model.json", "tmp_ckpt_model.bin", "tmp_ckpt_model2.json",
                          "tmp_ckpt_model2.bin"}) {
        std::remove(f);
    }
}

TEST_CASE("model config validation") {
    ModelConfig c = tiny_config();
    c.d_model = 7; // not divisible by 2 heads
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.max_seq = 32;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.vocab_size = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
