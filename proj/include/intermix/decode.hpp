#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "intermix/core.hpp"
#include "intermix/model.hpp"
#include "intermix/policy.hpp"

namespace intermix {

// Once the final chunk has arrived the end-of-audio marker becomes visible
// and remaining tokens are forced out, ignoring the wait token.
struct FlushConfig {
    int max_flush_tokens = 64;
};

struct DecodeOptions {
    PolicyConfig policy;
    FlushConfig flush;
    int per_chunk_emission_cap = 32;
};

struct DecodeResult {
    std::vector<TokenId> tokens;
    EmissionLog log;
};

// A decode that hit an emission cap before reaching <EOS>. Carries what was
// produced up to that point.
class TruncatedDecode : public std::runtime_error {
  public:
    TruncatedDecode(const std::string &what, DecodeResult partial_result)
        : std::runtime_error(what), partial(std::move(partial_result)) {}

    DecodeResult partial;
};

// Greedy streaming decode: chunks arrive one at a time, the policy decides
// wait/emit, and the step model produces tokens. The first chunk is
// available before any decision is made.
DecodeResult stream_decode(StepModel &model, const FrameStream &stream,
                           const DecodeOptions &opts);

// Offline decode: the whole stream is heard first, then every token is
// emitted at the final chunk.
DecodeResult decode_offline(StepModel &model, const FrameStream &stream,
                            const FlushConfig &flush = {});

void save_emission_logs_jsonl(const std::string &path, const std::vector<EmissionLog> &logs);
std::vector<EmissionLog> load_emission_logs_jsonl(const std::string &path);

} // namespace intermix
