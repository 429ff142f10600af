#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "intermix/align.hpp"
#include "intermix/decode.hpp"
#include "intermix/metrics.hpp"
#include "intermix/model.hpp"

using namespace intermix;

namespace {

// Two-phrase utterance over a 5-chunk stream: words become audible at
// chunks [3, 5, 5] and <EOS> closes at the final chunk. The gold step
// sequence is [W, W, w0, W, W, w1, w2, <EOS>].
struct WorkedExample {
    Vocabulary vocab = Vocabulary::make(10);
    FrameStream stream;
    Supervision sup;

    WorkedExample() {
        stream.frames_per_chunk = 8;
        stream.chunk_ms = 640;
        stream.frames.assign(40, std::vector<double>(1, 0.0));
        sup = compile_step_sequence({0, 1, 2, 2}, {20, 36, 40}, stream, {0, 1, 2, 9}, vocab);
    }
};

std::vector<int> emission_chunks(const EmissionLog &log) {
    std::vector<int> out;
    for (const Emission &e : log.emissions) out.push_back(e.chunk_index);
    return out;
}

// Stub that always insists on the same text token and never reaches <EOS>.
struct StuckModel : StepModel {
    Vocabulary vocab = Vocabulary::make(4);

    std::vector<double> step_logits(const DecodeContext &) override {
        std::vector<double> logits(static_cast<size_t>(vocab.size()), 0.0);
        logits[0] = 10.0;
        return logits;
    }
    const Vocabulary &vocabulary() const override { return vocab; }
};

} // namespace

TEST_CASE("streaming decode of the worked example") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab);
    DecodeOptions opts;
    opts.policy.kind = PolicyKind::Intermixed;

    DecodeResult r = stream_decode(oracle, ex.stream, opts);
    CHECK(r.tokens == std::vector<TokenId>{0, 1, 2, 9});
    CHECK(emission_chunks(r.log) == std::vector<int>{3, 5, 5, 5});
    CHECK(r.log.model_calls == 8);
    CHECK(r.log.policy_calls == 0);
    CHECK(calls_per_output_token(r.log) == doctest::Approx(2.0));
    CHECK(average_logical_latency(r.log) == doctest::Approx(0.88));
}

TEST_CASE("early exit halves the model calls without changing the output") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab);
    oracle.enable_early_exit();
    DecodeOptions opts;
    opts.policy.kind = PolicyKind::IntermixedEarlyExit;

    DecodeResult r = stream_decode(oracle, ex.stream, opts);
    CHECK(r.tokens == std::vector<TokenId>{0, 1, 2, 9});
    CHECK(emission_chunks(r.log) == std::vector<int>{3, 5, 5, 5});
    CHECK(r.log.model_calls == 4);
    CHECK(r.log.policy_calls == 5);
    CHECK(calls_per_output_token(r.log) == doctest::Approx(1.0));
}

TEST_CASE("a forced wait delays the first word by one chunk") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab);
    oracle.enable_early_exit();
    oracle.force_wait_at_chunk(3);
    DecodeOptions opts;
    opts.policy.kind = PolicyKind::IntermixedEarlyExit;

    DecodeResult r = stream_decode(oracle, ex.stream, opts);
    CHECK(r.tokens == std::vector<TokenId>{0, 1, 2, 9});
    CHECK(emission_chunks(r.log) == std::vector<int>{4, 5, 5, 5});
}

TEST_CASE("the exit-head penalty trades latency for compute monotonically") {
    WorkedExample ex;

    auto run_at = [&](double nu) {
        ScriptedOracle oracle(ex.sup, ex.vocab);
        oracle.enable_early_exit();
        DecodeOptions opts;
        opts.policy.kind = PolicyKind::IntermixedEarlyExit;
        opts.policy.penalties.nu = nu;
        return stream_decode(oracle, ex.stream, opts);
    };

    DecodeResult eager = run_at(1.0);
    DecodeResult neutral = run_at(0.0);
    DecodeResult patient = run_at(-2.0);
    // The point-mass oracle produces the same text at every setting.
    CHECK(eager.tokens == neutral.tokens);
    CHECK(patient.tokens == neutral.tokens);
    // Compute is non-decreasing in nu ...
    CHECK(patient.log.model_calls <= neutral.log.model_calls);
    CHECK(neutral.log.model_calls <= eager.log.model_calls);
    CHECK(eager.log.model_calls == 8); // head always says emit: back to 2x
    // ... and latency is non-increasing.
    CHECK(average_logical_latency(patient.log) >= average_logical_latency(neutral.log));
    CHECK(average_logical_latency(neutral.log) >= average_logical_latency(eager.log));
    // A strongly patient head defers everything to the flush.
    CHECK(emission_chunks(patient.log) == std::vector<int>{5, 5, 5, 5});
    CHECK(average_logical_latency(patient.log) == doctest::Approx(1.2));
}

TEST_CASE("offline decode emits everything at the final chunk") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab);
    DecodeResult r = decode_offline(oracle, ex.stream);
    CHECK(r.tokens == std::vector<TokenId>{0, 1, 2, 9});
    CHECK(emission_chunks(r.log) == std::vector<int>{5, 5, 5, 5});
    CHECK(average_logical_latency(r.log) == doctest::Approx(1.2));
}

TEST_CASE("wait-k timing on the worked example") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab);
    DecodeOptions opts;
    opts.policy.kind = PolicyKind::WaitK;
    opts.policy.wait_k = 3;

    DecodeResult r = stream_decode(oracle, ex.stream, opts);
    CHECK(r.tokens == std::vector<TokenId>{0, 1, 2, 9});
    CHECK(emission_chunks(r.log) == std::vector<int>{4, 5, 5, 5});
    CHECK(r.log.model_calls == 4); // one per emission, three in the flush
}

TEST_CASE("missing model capabilities are rejected up front") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab); // no early exit, no attention
    DecodeOptions opts;
    opts.policy.kind = PolicyKind::IntermixedEarlyExit;
    CHECK_THROWS_AS((void)stream_decode(oracle, ex.stream, opts), std::invalid_argument);
    opts.policy.kind = PolicyKind::AlignAtt;
    CHECK_THROWS_AS((void)stream_decode(oracle, ex.stream, opts), std::invalid_argument);
    FrameStream empty;
    opts.policy.kind = PolicyKind::Intermixed;
    CHECK_THROWS_AS((void)stream_decode(oracle, empty, opts), std::invalid_argument);
}

TEST_CASE("runaway decodes are truncated, keeping the partial result") {
    StuckModel model;
    FrameStream stream;
    stream.frames_per_chunk = 2;
    stream.frames.assign(4, std::vector<double>(1, 0.0)); // 2 chunks

    SUBCASE("per-chunk emission cap") {
        DecodeOptions opts;
        opts.per_chunk_emission_cap = 4;
        try {
            (void)stream_decode(model, stream, opts);
            FAIL("expected truncation");
        } catch (const TruncatedDecode &e) {
            CHECK(e.partial.tokens.size() == 4);
            CHECK(e.partial.log.emissions.size() == 4);
        }
    }
    SUBCASE("flush cap") {
        FrameStream one;
        one.frames_per_chunk = 2;
        one.frames.assign(2, std::vector<double>(1, 0.0));
        DecodeOptions opts;
        opts.flush.max_flush_tokens = 5;
        try {
            (void)stream_decode(model, one, opts);
            FAIL("expected truncation");
        } catch (const TruncatedDecode &e) {
            CHECK(e.partial.tokens.size() == 5);
            for (const Emission &em : e.partial.log.emissions) CHECK(em.chunk_index == 1);
        }
    }
}

TEST_CASE("emission logs round-trip through JSONL") {
    WorkedExample ex;
    ScriptedOracle oracle(ex.sup, ex.vocab);
    DecodeOptions opts;
    std::vector<EmissionLog> logs;
    logs.push_back(stream_decode(oracle, ex.stream, opts).log);
    logs.push_back(decode_offline(oracle, ex.stream).log);

    const std::string path = "logs_io_test.jsonl";
    save_emission_logs_jsonl(path, logs);
    std::vector<EmissionLog> back = load_emission_logs_jsonl(path);
    REQUIRE(back.size() == logs.size());
    for (size_t i = 0; i < logs.size(); ++i) {
        CHECK(back[i].model_calls == logs[i].model_calls);
        CHECK(back[i].policy_calls == logs[i].policy_calls);
        CHECK(back[i].total_chunks == logs[i].total_chunks);
        CHECK(back[i].chunk_ms == logs[i].chunk_ms);
        REQUIRE(back[i].emissions.size() == logs[i].emissions.size());
        for (size_t j = 0; j < logs[i].emissions.size(); ++j) {
            CHECK(back[i].emissions[j].token == logs[i].emissions[j].token);
            CHECK(back[i].emissions[j].chunk_index == logs[i].emissions[j].chunk_index);
        }
        CHECK(average_logical_latency(back[i]) ==
              doctest::Approx(average_logical_latency(logs[i])));
    }
    std::remove(path.c_str());
}
