#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intermix/align.hpp"
#include "intermix/core.hpp"

namespace intermix {

enum class ReorderMode : uint8_t { Monotonic, LocalSwap, BlockReorder };

std::string reorder_mode_name(ReorderMode mode);
ReorderMode reorder_mode_from_name(const std::string &name);

// Configuration for the synthetic corpus. The target side is a deterministic
// function of the source tokens (lexical map plus phrase reordering), so the
// translation task itself is learnable; randomness only enters through the
// source sampling, frame timing and noise.
struct SynthConfig {
    int vocab_size = 20; // text tokens including <EOS>
    int min_source_len = 3;
    int max_source_len = 6;
    int frames_per_source_token_mean = 4;
    int frames_per_source_token_jitter = 1;
    int frame_dim = 16;
    int frames_per_chunk = 8;
    int chunk_ms = 640;
    ReorderMode reorder_mode = ReorderMode::Monotonic;
    int max_phrase_len = 3;
    // Each example gets a seeded uniform silence prefix in [0, this] chunks.
    int silence_prefix_chunks = 0;
    // Likewise a trailing silence stretch in [0, this] chunks, so speech can
    // end before the stream does and emission timing has room to vary.
    int silence_suffix_chunks = 0;
    double frame_noise_std = 0.05;
    uint64_t seed = 0;

    void validate() const;
    Vocabulary vocabulary() const { return Vocabulary::make(vocab_size); }
};

struct SynthExample {
    std::vector<TokenId> source_tokens;
    std::vector<TokenId> target_tokens; // ends with <EOS>
    FrameStream frames;
    std::vector<int> word_end_frames; // per source word, 1-based end counts
    PhraseAlignment gold_alignment;   // covers every target token, <EOS> included
};

std::vector<SynthExample> generate_corpus(const SynthConfig &config, int n);

// Prepends `chunks` whole chunks of near-silence and shifts the timestamps
// accordingly; the alignment is untouched.
SynthExample inject_silence(const SynthExample &ex, int chunks, uint64_t seed = 0x51eece);

enum class CorruptionMode : uint8_t { PrematureWordLevel };

// Splits phrases into single-word pairs and moves a seeded fraction of the
// target words to earlier source words, mimicking word-level aligners that
// anchor words before their audio has been heard.
PhraseAlignment corrupt_alignment(const PhraseAlignment &a, CorruptionMode mode,
                                  double fraction, int source_len, uint64_t seed);

// Gold alignments straight from the generator.
class GoldAlignmentProvider : public AlignmentProvider {
  public:
    explicit GoldAlignmentProvider(std::vector<SynthExample> corpus) : corpus_(std::move(corpus)) {}
    PhraseAlignment align(const std::vector<TokenId> &source,
                          const std::vector<TokenId> &target) override;

  private:
    std::vector<SynthExample> corpus_;
};

// JSONL persistence (one utterance per line, core schema plus timestamps
// and alignment).
void save_corpus_jsonl(const std::vector<SynthExample> &corpus, const SynthConfig &config,
                       const std::string &path);
std::vector<SynthExample> load_corpus_jsonl(const std::string &path, const SynthConfig &config);

void save_config_json(const SynthConfig &config, const std::string &path);
SynthConfig load_config_json(const std::string &path);

} // namespace intermix
