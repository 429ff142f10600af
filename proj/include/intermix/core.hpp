#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace intermix {

using TokenId = int;

// Output vocabulary: text tokens (including <EOS>) plus one reserved wait
// token. Ids are dense in [0, size()).
struct Vocabulary {
    int num_text_tokens = 0; // ids [0, num_text_tokens), <EOS> included
    TokenId eos_id = -1;
    TokenId wait_id = -1; // == num_text_tokens

    static Vocabulary make(int num_text_tokens);

    int size() const { return num_text_tokens + 1; }
    bool is_text(TokenId id) const { return id >= 0 && id < num_text_tokens; }
    bool is_wait(TokenId id) const { return id == wait_id; }

    std::string token_string(TokenId id) const;
    TokenId token_from_string(const std::string &s) const;
};

// A sequence over the augmented vocabulary: text tokens interspersed with
// wait tokens. A complete sequence ends with <EOS>, which appears once.
struct StepSequence {
    std::vector<TokenId> steps;

    bool well_formed(const Vocabulary &vocab) const;
};

enum class WaitEmit : uint8_t { Wait, Emit };

struct WaitEmitSequence {
    std::vector<WaitEmit> decisions;
};

// Synthetic feature stream, split into fixed non-overlapping chunks.
struct FrameStream {
    std::vector<std::vector<double>> frames;
    int frames_per_chunk = 8;
    int chunk_ms = 640;

    int num_chunks() const;
    // 1-based chunk containing the given 1-based end-frame count.
    int chunk_of_end_frame(int end_frame) const;
    double duration_seconds() const {
        return num_chunks() * (chunk_ms / 1000.0);
    }
};

struct Emission {
    TokenId token;
    int chunk_index; // 1-based chunk after which the token was available
    int wall_order;  // emission order within the utterance
};

// Per-utterance record of what was emitted when, and what it cost.
struct EmissionLog {
    std::vector<Emission> emissions;
    long model_calls = 0;
    long policy_calls = 0;
    int total_chunks = 0;
    int chunk_ms = 640;

    double emit_time_seconds(size_t i) const {
        return emissions[i].chunk_index * (chunk_ms / 1000.0);
    }
    double duration_seconds() const { return total_chunks * (chunk_ms / 1000.0); }
};

// w(y): the text tokens of y, in order, <EOS> included.
std::vector<TokenId> words_of(const StepSequence &y, const Vocabulary &vocab);

// u(y): number of non-wait steps.
int count_text(const StepSequence &y, const Vocabulary &vocab);
// t(y): number of wait steps.
int count_wait(const StepSequence &y, const Vocabulary &vocab);

// The step sequence of an offline system: T-1 waits, then all words. The
// first chunk is available before any step is taken, so chunk 1 needs no
// wait step.
StepSequence offline_step_sequence(const std::vector<TokenId> &words, int total_chunks,
                                   const Vocabulary &vocab);

WaitEmitSequence wait_emit_of(const StepSequence &y, const Vocabulary &vocab);

// Inverse of (words_of, wait_emit_of): interleave words back into a step
// sequence following the wait/emit pattern.
StepSequence interleave(const std::vector<TokenId> &words, const WaitEmitSequence &pattern,
                        const Vocabulary &vocab);

} // namespace intermix
