#pragma once

#include <memory>
#include <vector>

#include "intermix/core.hpp"

namespace intermix {

// Inclusive word-index span.
struct Span {
    int begin = 0;
    int end = 0; // inclusive

    bool contains(int i) const { return i >= begin && i <= end; }
    int length() const { return end - begin + 1; }
};

struct PhrasePair {
    Span source;
    Span target;
    bool valid = true;
};

// Pairs of contiguous source/target word spans. After repair, the valid
// pairs cover every target word exactly once.
struct PhraseAlignment {
    std::vector<PhrasePair> pairs;
};

enum class LayoutSlotKind : uint8_t { SpeechChunk, TextToken };

struct LayoutSlot {
    LayoutSlotKind kind;
    int index; // 1-based chunk index, or token id

    static LayoutSlot chunk(int c) { return {LayoutSlotKind::SpeechChunk, c}; }
    static LayoutSlot token(TokenId id) { return {LayoutSlotKind::TextToken, id}; }
    bool operator==(const LayoutSlot &) const = default;
};

// Compiled training target: the step sequence, the mixed speech/text input
// layout that conditions it (slot i feeds the prediction of step i), and
// the chunk at which each target word becomes available.
struct Supervision {
    StepSequence steps;
    std::vector<LayoutSlot> input_layout;
    std::vector<int> word_emit_chunk; // per target word, 1-based
};

// Marks pairs that do not fit the given texts invalid and re-attaches every
// uncovered target word to the nearest following valid pair; target words
// with no following valid pair are anchored at the final source word.
PhraseAlignment validate_and_repair(const PhraseAlignment &a, int source_len, int target_len);

// Per-target-word index of the last word of its pair's source span.
// Requires a repaired (totally covering) alignment.
std::vector<int> anchor_target_words(const PhraseAlignment &a, int target_len);

// Builds the step sequence and input layout from per-word availability
// chunks. The chunks must be monotone and end at the final chunk.
Supervision supervision_from_emit_chunks(const std::vector<int> &emit_chunks,
                                         const std::vector<TokenId> &target, int total_chunks,
                                         const Vocabulary &vocab);

// Turns word anchors plus source-word timestamps into step-sequence
// supervision. A word is available once the chunk holding its anchor's end
// frame is complete; emission chunks are made monotone; <EOS> is anchored
// to the final chunk so every supervision consumes the whole stream.
Supervision compile_step_sequence(const std::vector<int> &anchors,
                                  const std::vector<int> &word_end_frames,
                                  const FrameStream &stream,
                                  const std::vector<TokenId> &target,
                                  const Vocabulary &vocab);

// Pluggable source of phrase alignments for a (source, target) pair.
class AlignmentProvider {
  public:
    virtual ~AlignmentProvider() = default;
    virtual PhraseAlignment align(const std::vector<TokenId> &source,
                                  const std::vector<TokenId> &target) = 0;
};

} // namespace intermix
