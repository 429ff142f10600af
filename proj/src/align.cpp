#include "intermix/align.hpp"

#include <algorithm>
#include <stdexcept>

namespace intermix {

namespace {

bool span_in_range(const Span &s, int len) {
    return s.begin >= 0 && s.begin <= s.end && s.end < len;
}

} // namespace

PhraseAlignment validate_and_repair(const PhraseAlignment &a, int source_len, int target_len) {
    // Pass 1: mark pairs whose spans do not fit the texts, or whose target
    // span collides with an earlier valid pair, as invalid.
    std::vector<PhrasePair> valid;
    std::vector<bool> covered(static_cast<size_t>(target_len), false);
    for (const PhrasePair &p : a.pairs) {
        if (!p.valid || !span_in_range(p.source, source_len) || !span_in_range(p.target, target_len)) {
            continue;
        }
        bool overlap = false;
        for (int j = p.target.begin; j <= p.target.end; ++j) {
            if (covered[j]) overlap = true;
        }
        if (overlap) continue;
        for (int j = p.target.begin; j <= p.target.end; ++j) covered[j] = true;
        valid.push_back({p.source, p.target, true});
    }
    std::sort(valid.begin(), valid.end(),
              [](const PhrasePair &x, const PhrasePair &y) { return x.target.begin < y.target.begin; });

    // Pass 2: attach runs of uncovered target words to the next valid pair's
    // source span; trailing runs anchor at the final source word.
    PhraseAlignment repaired;
    size_t vi = 0;
    int j = 0;
    while (j < target_len) {
        if (vi < valid.size() && valid[vi].target.begin == j) {
            repaired.pairs.push_back(valid[vi]);
            j = valid[vi].target.end + 1;
            ++vi;
            continue;
        }
        int run_begin = j;
        while (j < target_len && !covered[j]) ++j;
        Span source_span{source_len - 1, source_len - 1};
        if (vi < valid.size()) source_span = valid[vi].source;
        repaired.pairs.push_back({source_span, Span{run_begin, j - 1}, true});
    }
    return repaired;
}

std::vector<int> anchor_target_words(const PhraseAlignment &a, int target_len) {
    std::vector<int> anchors(static_cast<size_t>(target_len), -1);
    for (const PhrasePair &p : a.pairs) {
        if (!p.valid) continue;
        for (int j = p.target.begin; j <= p.target.end; ++j) {
            if (j < 0 || j >= target_len || anchors[j] != -1) {
                throw std::invalid_argument("alignment does not cover the target exactly once");
            }
            anchors[j] = p.source.end;
        }
    }
    for (int anchor : anchors) {
        if (anchor < 0) {
            throw std::invalid_argument("alignment does not cover the target exactly once");
        }
    }
    return anchors;
}

Supervision supervision_from_emit_chunks(const std::vector<int> &emit_chunks,
                                         const std::vector<TokenId> &target, int total_chunks,
                                         const Vocabulary &vocab) {
    if (target.empty() || target.back() != vocab.eos_id) {
        throw std::invalid_argument("target must end with <EOS>");
    }
    if (emit_chunks.size() != target.size()) {
        throw std::invalid_argument("need one emission chunk per target word");
    }
    if (total_chunks < 1) throw std::invalid_argument("empty stream");
    int prev = 1;
    for (int c : emit_chunks) {
        if (c < prev || c > total_chunks) {
            throw std::invalid_argument("emission chunks must be monotone within the stream");
        }
        prev = c;
    }
    if (emit_chunks.back() != total_chunks) {
        throw std::invalid_argument("<EOS> must be emitted at the final chunk");
    }

    Supervision sup;
    sup.word_emit_chunk = emit_chunks;
    int waits_so_far = 0;
    for (size_t j = 0; j < target.size(); ++j) {
        for (; waits_so_far < emit_chunks[j] - 1; ++waits_so_far) {
            sup.steps.steps.push_back(vocab.wait_id);
        }
        sup.steps.steps.push_back(target[j]);
    }

    // Slot i conditions step i: the first slot is chunk 1; afterwards a wait
    // step pulls in the next chunk and a text step feeds its own embedding.
    int chunk = 1;
    sup.input_layout.push_back(LayoutSlot::chunk(chunk));
    for (size_t i = 1; i < sup.steps.steps.size(); ++i) {
        TokenId previous = sup.steps.steps[i - 1];
        if (vocab.is_wait(previous)) {
            sup.input_layout.push_back(LayoutSlot::chunk(++chunk));
        } else {
            sup.input_layout.push_back(LayoutSlot::token(previous));
        }
    }
    return sup;
}

Supervision compile_step_sequence(const std::vector<int> &anchors,
                                  const std::vector<int> &word_end_frames,
                                  const FrameStream &stream,
                                  const std::vector<TokenId> &target,
                                  const Vocabulary &vocab) {
    if (target.empty() || target.back() != vocab.eos_id) {
        throw std::invalid_argument("target must end with <EOS>");
    }
    if (anchors.size() != target.size()) {
        throw std::invalid_argument("need one anchor per target word");
    }
    const int total_chunks = stream.num_chunks();
    if (total_chunks < 1) throw std::invalid_argument("empty stream");

    std::vector<int> emit_chunks(target.size());
    int prev_chunk = 1;
    for (size_t j = 0; j + 1 < target.size(); ++j) {
        if (anchors[j] < 0 || anchors[j] >= static_cast<int>(word_end_frames.size())) {
            throw std::out_of_range("anchor outside the source");
        }
        int chunk = stream.chunk_of_end_frame(word_end_frames[anchors[j]]);
        prev_chunk = std::max(prev_chunk, chunk);
        emit_chunks[j] = prev_chunk;
    }
    // <EOS> is anchored to the final chunk: every supervision consumes the
    // whole stream.
    emit_chunks.back() = total_chunks;
    return supervision_from_emit_chunks(emit_chunks, target, total_chunks, vocab);
}

} // namespace intermix
