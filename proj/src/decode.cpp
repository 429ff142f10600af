#include "intermix/decode.hpp"

#include <fstream>

#include "json.hpp"

namespace intermix {

namespace {

struct Decoder {
    StepModel &model;
    const FrameStream &stream;
    const DecodeOptions &opts;

    int total_chunks;
    int heard = 1;
    std::vector<LayoutSlot> layout;
    DecodeResult result;
    bool finished = false;

    Decoder(StepModel &m, const FrameStream &s, const DecodeOptions &o)
        : model(m), stream(s), opts(o), total_chunks(s.num_chunks()) {
        if (total_chunks < 1) throw std::invalid_argument("empty stream");
        layout.push_back(LayoutSlot::chunk(1));
        result.log.total_chunks = total_chunks;
        result.log.chunk_ms = stream.chunk_ms;
    }

    DecodeContext ctx() const {
        return {&stream, &layout, &result.tokens, heard, heard == total_chunks};
    }

    void advance() {
        ++heard;
        layout.push_back(LayoutSlot::chunk(heard));
    }

    void emit(TokenId tok) {
        result.log.emissions.push_back(
            {tok, heard, static_cast<int>(result.log.emissions.size())});
        if (tok == model.vocabulary().eos_id) {
            result.tokens.push_back(tok);
            finished = true;
            return;
        }
        result.tokens.push_back(tok);
        layout.push_back(LayoutSlot::token(tok));
    }

    std::vector<double> model_logits() {
        ++result.log.model_calls;
        return model.step_logits(ctx());
    }

    WaitEmit policy_decision() {
        const PolicyConfig &p = opts.policy;
        switch (p.kind) {
        case PolicyKind::WaitK:
            return wait_k_decision(heard, static_cast<int>(result.tokens.size()), p.wait_k);
        case PolicyKind::AlignAtt:
            return alignatt_decision(model.attention_peak(ctx()), heard, p.alignatt_window);
        case PolicyKind::IntermixedEarlyExit: {
            ++result.log.policy_calls;
            auto [w, e] = model.early_exit_wait_emit(ctx());
            return early_exit_decision(w, e, p.penalties.nu);
        }
        case PolicyKind::Intermixed: return WaitEmit::Emit;
        }
        throw std::logic_error("unreachable");
    }

    bool fixed_policy() const {
        return opts.policy.kind == PolicyKind::WaitK || opts.policy.kind == PolicyKind::AlignAtt;
    }

    // Emission turn at the current chunk for the intermixed policies: keep
    // producing tokens until the model asks to wait (or, with early exit,
    // the head does).
    void intermixed_turn() {
        const Vocabulary &vocab = model.vocabulary();
        int count = 0;
        while (true) {
            std::vector<double> logits = model_logits();
            apply_wait_penalty(logits, vocab.wait_id, opts.policy.penalties.kappa);
            TokenId tok = argmax_lowest(logits);
            if (vocab.is_wait(tok)) {
                advance();
                return;
            }
            emit(tok);
            if (finished) return;
            if (++count >= opts.per_chunk_emission_cap) {
                throw TruncatedDecode("per-chunk emission cap hit before <EOS>",
                                      std::move(result));
            }
            if (opts.policy.uses_early_exit()) {
                ++result.log.policy_calls;
                auto [w, e] = model.early_exit_wait_emit(ctx());
                if (early_exit_decision(w, e, opts.policy.penalties.nu) == WaitEmit::Wait) {
                    advance();
                    return;
                }
            }
        }
    }

    void flush(const FlushConfig &cfg) {
        const Vocabulary &vocab = model.vocabulary();
        int flushed = 0;
        while (!finished) {
            std::vector<double> logits = model_logits();
            TokenId tok = argmax_excluding(logits, vocab.wait_id);
            emit(tok);
            if (finished) return;
            if (++flushed >= cfg.max_flush_tokens) {
                throw TruncatedDecode("flush cap hit before <EOS>", std::move(result));
            }
        }
    }

    DecodeResult run() {
        if (opts.policy.kind == PolicyKind::AlignAtt && !model.has_attention_peak()) {
            throw std::invalid_argument("model exposes no attention peak");
        }
        if (opts.policy.uses_early_exit() && !model.has_early_exit()) {
            throw std::invalid_argument("model has no early-exit head");
        }
        while (!finished) {
            if (heard == total_chunks) {
                flush(opts.flush);
                break;
            }
            if (policy_decision() == WaitEmit::Wait) {
                advance();
                continue;
            }
            if (fixed_policy()) {
                std::vector<double> logits = model_logits();
                emit(argmax_excluding(logits, model.vocabulary().wait_id));
            } else {
                intermixed_turn();
            }
        }
        return std::move(result);
    }
};

} // namespace

DecodeResult stream_decode(StepModel &model, const FrameStream &stream,
                           const DecodeOptions &opts) {
    Decoder d(model, stream, opts);
    return d.run();
}

DecodeResult decode_offline(StepModel &model, const FrameStream &stream,
                            const FlushConfig &flush) {
    DecodeOptions opts;
    opts.flush = flush;
    Decoder d(model, stream, opts);
    while (d.heard < d.total_chunks) d.advance();
    d.flush(flush);
    return std::move(d.result);
}

void save_emission_logs_jsonl(const std::string &path, const std::vector<EmissionLog> &logs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const EmissionLog &log : logs) {
        nlohmann::json emissions = nlohmann::json::array();
        for (const Emission &e : log.emissions) {
            emissions.push_back({{"token", e.token}, {"chunk", e.chunk_index}});
        }
        nlohmann::json j = {{"emissions", std::move(emissions)},
                            {"model_calls", log.model_calls},
                            {"policy_calls", log.policy_calls},
                            {"total_chunks", log.total_chunks},
                            {"chunk_ms", log.chunk_ms}};
        out << j.dump() << '\n';
    }
}

std::vector<EmissionLog> load_emission_logs_jsonl(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<EmissionLog> logs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        EmissionLog log;
        for (const nlohmann::json &e : j.at("emissions")) {
            log.emissions.push_back({e.at("token").get<TokenId>(), e.at("chunk").get<int>(),
                                     static_cast<int>(log.emissions.size())});
        }
        log.model_calls = j.at("model_calls").get<long>();
        log.policy_calls = j.at("policy_calls").get<long>();
        log.total_chunks = j.at("total_chunks").get<int>();
        log.chunk_ms = j.at("chunk_ms").get<int>();
        logs.push_back(std::move(log));
    }
    return logs;
}

} // namespace intermix
