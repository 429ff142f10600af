#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "doctest.h"
#include "intermix/run.hpp"
#include "intermix/synth.hpp"

using namespace intermix;

namespace {

bool examples_equal(const SynthExample &a, const SynthExample &b) {
    return a.source_tokens == b.source_tokens && a.target_tokens == b.target_tokens &&
           a.word_end_frames == b.word_end_frames && a.frames.frames == b.frames.frames;
}

} // namespace

TEST_CASE("generation is deterministic in the seed") {
    SynthConfig sc;
    sc.seed = 99;
    sc.reorder_mode = ReorderMode::LocalSwap;
    auto a = generate_corpus(sc, 20);
    auto b = generate_corpus(sc, 20);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(examples_equal(a[i], b[i]));
    sc.seed = 100;
    auto c = generate_corpus(sc, 20);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i) any_diff |= !examples_equal(a[i], c[i]);
    CHECK(any_diff);
}

TEST_CASE("the target is a pure function of the source") {
    SynthConfig sc;
    sc.seed = 7;
    sc.min_source_len = 3;
    sc.max_source_len = 4;
    sc.vocab_size = 8; // few distinct sources, so collisions happen
    sc.reorder_mode = ReorderMode::BlockReorder;
    auto corpus = generate_corpus(sc, 300);
    std::map<std::vector<TokenId>, std::vector<TokenId>> seen;
    int collisions = 0;
    for (const SynthExample &ex : corpus) {
        auto [it, inserted] = seen.emplace(ex.source_tokens, ex.target_tokens);
        if (!inserted) {
            ++collisions;
            CHECK(it->second == ex.target_tokens);
        }
    }
    CHECK(collisions > 0); // the check above actually fired
}

TEST_CASE("generated examples satisfy their documented shape") {
    SynthConfig sc;
    sc.seed = 5;
    Vocabulary vocab = sc.vocabulary();
    for (const SynthExample &ex : generate_corpus(sc, 30)) {
        CHECK(ex.source_tokens.size() >= static_cast<size_t>(sc.min_source_len));
        CHECK(ex.source_tokens.size() <= static_cast<size_t>(sc.max_source_len));
        CHECK(ex.target_tokens.back() == vocab.eos_id);
        CHECK(ex.target_tokens.size() == ex.source_tokens.size() + 1);
        CHECK(ex.word_end_frames.size() == ex.source_tokens.size());
        for (size_t j = 1; j < ex.word_end_frames.size(); ++j) {
            CHECK(ex.word_end_frames[j] > ex.word_end_frames[j - 1]);
        }
        CHECK(ex.word_end_frames.back() <= static_cast<int>(ex.frames.frames.size()));
        // Gold alignment covers the target exactly once.
        (void)anchor_target_words(
            validate_and_repair(ex.gold_alignment, static_cast<int>(ex.source_tokens.size()),
                                static_cast<int>(ex.target_tokens.size())),
            static_cast<int>(ex.target_tokens.size()));
    }
}

TEST_CASE("block reorder puts the final source phrase first") {
    SynthConfig sc;
    sc.seed = 21;
    sc.reorder_mode = ReorderMode::BlockReorder;
    auto corpus = generate_corpus(sc, 50);
    bool checked = false;
    for (const SynthExample &ex : corpus) {
        // Skip single-phrase sources (rotation is the identity there).
        const PhrasePair &first = ex.gold_alignment.pairs.front();
        if (first.source.begin == 0) continue;
        CHECK(first.target.begin == 0);
        CHECK(first.source.end == static_cast<int>(ex.source_tokens.size()) - 1);
        checked = true;
    }
    CHECK(checked);
}

TEST_CASE("silence injection shifts timestamps and stays quiet") {
    SynthConfig sc;
    sc.seed = 3;
    auto corpus = generate_corpus(sc, 3);
    const SynthExample &ex = corpus[0];
    SynthExample shifted = inject_silence(ex, 8);
    const int prefix = 8 * ex.frames.frames_per_chunk;
    CHECK(shifted.frames.frames.size() == ex.frames.frames.size() + prefix);
    CHECK(shifted.frames.num_chunks() == ex.frames.num_chunks() + 8);
    for (size_t j = 0; j < ex.word_end_frames.size(); ++j) {
        CHECK(shifted.word_end_frames[j] == ex.word_end_frames[j] + prefix);
    }
    for (int f = 0; f < prefix; ++f) {
        for (double x : shifted.frames.frames[f]) CHECK(std::fabs(x) < 0.1);
    }
    for (size_t f = 0; f < ex.frames.frames.size(); ++f) {
        CHECK(shifted.frames.frames[prefix + f] == ex.frames.frames[f]);
    }
    CHECK(examples_equal(inject_silence(ex, 0), ex));
    CHECK_THROWS_AS((void)inject_silence(ex, -1), std::invalid_argument);
}

TEST_CASE("trailing silence extends the stream past the last word") {
    SynthConfig sc;
    sc.seed = 3;
    sc.silence_suffix_chunks = 6;
    SynthConfig plain = sc;
    plain.silence_suffix_chunks = 0;
    auto with = generate_corpus(sc, 20);
    auto without = generate_corpus(plain, 20);
    bool any_longer = false;
    for (size_t i = 0; i < with.size(); ++i) {
        CHECK(with[i].source_tokens == without[i].source_tokens);
        CHECK(with[i].target_tokens == without[i].target_tokens);
        CHECK(with[i].word_end_frames == without[i].word_end_frames);
        const int speech = with[i].word_end_frames.back();
        CHECK(static_cast<int>(with[i].frames.frames.size()) >= speech);
        any_longer |= with[i].frames.frames.size() > without[i].frames.frames.size();
        for (size_t f = speech; f < with[i].frames.frames.size(); ++f) {
            for (double x : with[i].frames.frames[f]) CHECK(std::fabs(x) < 0.1);
        }
    }
    CHECK(any_longer);
    sc.silence_suffix_chunks = -1;
    CHECK_THROWS_AS((void)generate_corpus(sc, 1), std::invalid_argument);
}

TEST_CASE("premature corruption only moves anchors earlier") {
    SynthConfig sc;
    sc.seed = 17;
    sc.reorder_mode = ReorderMode::BlockReorder;
    Vocabulary vocab = sc.vocabulary();
    int moved = 0;
    for (const SynthExample &ex : generate_corpus(sc, 30)) {
        const int slen = static_cast<int>(ex.source_tokens.size());
        const int tlen = static_cast<int>(ex.target_tokens.size());
        std::vector<int> gold =
            anchor_target_words(validate_and_repair(ex.gold_alignment, slen, tlen), tlen);

        PhraseAlignment same =
            corrupt_alignment(ex.gold_alignment, CorruptionMode::PrematureWordLevel, 0.0, slen, 1);
        CHECK(anchor_target_words(validate_and_repair(same, slen, tlen), tlen) == gold);

        PhraseAlignment all =
            corrupt_alignment(ex.gold_alignment, CorruptionMode::PrematureWordLevel, 1.0, slen, 1);
        std::vector<int> hurried = anchor_target_words(validate_and_repair(all, slen, tlen), tlen);
        for (int j = 0; j < tlen; ++j) {
            CHECK(hurried[j] <= gold[j]);
            if (hurried[j] < gold[j]) ++moved;
        }
        // Seeded: the same corruption twice is identical.
        PhraseAlignment again =
            corrupt_alignment(ex.gold_alignment, CorruptionMode::PrematureWordLevel, 1.0, slen, 1);
        CHECK(anchor_target_words(validate_and_repair(again, slen, tlen), tlen) == hurried);
    }
    CHECK(moved > 0);
    PhraseAlignment empty;
    CHECK_THROWS_AS(
        (void)corrupt_alignment(empty, CorruptionMode::PrematureWordLevel, 1.5, 3, 1),
        std::invalid_argument);
}

TEST_CASE("corpus persistence round-trips") {
    SynthConfig sc;
    sc.seed = 13;
    sc.reorder_mode = ReorderMode::LocalSwap;
    auto corpus = generate_corpus(sc, 5);
    const std::string dir = "synth_io_test";
    std::remove((dir + ".jsonl").c_str());
    save_corpus_jsonl(corpus, sc, dir + ".jsonl");
    auto loaded = load_corpus_jsonl(dir + ".jsonl", sc);
    REQUIRE(loaded.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        CHECK(examples_equal(loaded[i], corpus[i]));
        CHECK(loaded[i].gold_alignment.pairs.size() == corpus[i].gold_alignment.pairs.size());
    }
    save_config_json(sc, dir + ".json");
    SynthConfig back = load_config_json(dir + ".json");
    CHECK(back.vocab_size == sc.vocab_size);
    CHECK(back.seed == sc.seed);
    CHECK(back.reorder_mode == sc.reorder_mode);
    CHECK(back.frame_noise_std == sc.frame_noise_std);
    std::remove((dir + ".jsonl").c_str());
    std::remove((dir + ".json").c_str());
}

TEST_CASE("config validation") {
    SynthConfig sc;
    sc.vocab_size = 2;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    sc = SynthConfig{};
    sc.frames_per_source_token_jitter = sc.frames_per_source_token_mean;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    sc = SynthConfig{};
    sc.min_source_len = 4;
    sc.max_source_len = 3;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    CHECK_THROWS_AS((void)reorder_mode_from_name("sideways"), std::invalid_argument);
}
