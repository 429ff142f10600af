#include "intermix/core.hpp"

#include <stdexcept>

namespace intermix {

Vocabulary Vocabulary::make(int num_text_tokens) {
    if (num_text_tokens < 1) {
        throw std::invalid_argument("vocabulary needs at least the <EOS> token");
    }
    Vocabulary v;
    v.num_text_tokens = num_text_tokens;
    v.eos_id = num_text_tokens - 1;
    v.wait_id = num_text_tokens;
    return v;
}

std::string Vocabulary::token_string(TokenId id) const {
    if (id == wait_id) return "<W>";
    if (id == eos_id) return "<EOS>";
    if (!is_text(id)) throw std::out_of_range("token id out of vocabulary");
    return "t" + std::to_string(id);
}

TokenId Vocabulary::token_from_string(const std::string &s) const {
    if (s == "<W>") return wait_id;
    if (s == "<EOS>") return eos_id;
    if (s.size() < 2 || s[0] != 't') {
        throw std::invalid_argument("unknown token string: " + s);
    }
    TokenId id = std::stoi(s.substr(1));
    if (!is_text(id)) throw std::out_of_range("token id out of vocabulary: " + s);
    return id;
}

bool StepSequence::well_formed(const Vocabulary &vocab) const {
    if (steps.empty()) return false;
    int eos_count = 0;
    for (TokenId id : steps) {
        if (id < 0 || id >= vocab.size()) return false;
        if (id == vocab.eos_id) ++eos_count;
    }
    return eos_count == 1 && steps.back() == vocab.eos_id;
}

int FrameStream::num_chunks() const {
    if (frames.empty()) return 0;
    return static_cast<int>((frames.size() + frames_per_chunk - 1) / frames_per_chunk);
}

int FrameStream::chunk_of_end_frame(int end_frame) const {
    if (end_frame < 1 || end_frame > static_cast<int>(frames.size())) {
        throw std::out_of_range("end frame outside the stream");
    }
    return (end_frame + frames_per_chunk - 1) / frames_per_chunk;
}

std::vector<TokenId> words_of(const StepSequence &y, const Vocabulary &vocab) {
    std::vector<TokenId> words;
    for (TokenId id : y.steps) {
        if (!vocab.is_wait(id)) words.push_back(id);
    }
    return words;
}

int count_text(const StepSequence &y, const Vocabulary &vocab) {
    int n = 0;
    for (TokenId id : y.steps) {
        if (!vocab.is_wait(id)) ++n;
    }
    return n;
}

int count_wait(const StepSequence &y, const Vocabulary &vocab) {
    return static_cast<int>(y.steps.size()) - count_text(y, vocab);
}

StepSequence offline_step_sequence(const std::vector<TokenId> &words, int total_chunks,
                                   const Vocabulary &vocab) {
    if (words.empty()) throw std::invalid_argument("empty word sequence");
    if (words.back() != vocab.eos_id) {
        throw std::invalid_argument("word sequence must end with <EOS>");
    }
    if (total_chunks < 1) throw std::invalid_argument("need at least one chunk");
    StepSequence y;
    y.steps.assign(total_chunks - 1, vocab.wait_id);
    y.steps.insert(y.steps.end(), words.begin(), words.end());
    return y;
}

WaitEmitSequence wait_emit_of(const StepSequence &y, const Vocabulary &vocab) {
    WaitEmitSequence theta;
    theta.decisions.reserve(y.steps.size());
    for (TokenId id : y.steps) {
        theta.decisions.push_back(vocab.is_wait(id) ? WaitEmit::Wait : WaitEmit::Emit);
    }
    return theta;
}

StepSequence interleave(const std::vector<TokenId> &words, const WaitEmitSequence &pattern,
                        const Vocabulary &vocab) {
    StepSequence y;
    size_t next_word = 0;
    for (WaitEmit d : pattern.decisions) {
        if (d == WaitEmit::Wait) {
            y.steps.push_back(vocab.wait_id);
        } else {
            if (next_word >= words.size()) {
                throw std::invalid_argument("pattern has more emits than words");
            }
            y.steps.push_back(words[next_word++]);
        }
    }
    if (next_word != words.size()) {
        throw std::invalid_argument("pattern has fewer emits than words");
    }
    return y;
}

} // namespace intermix
