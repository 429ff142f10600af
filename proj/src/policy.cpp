#include "intermix/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace intermix {

std::string policy_kind_name(PolicyKind kind) {
    switch (kind) {
    case PolicyKind::WaitK: return "wait_k";
    case PolicyKind::AlignAtt: return "alignatt";
    case PolicyKind::Intermixed: return "intermixed";
    case PolicyKind::IntermixedEarlyExit: return "intermixed+early_exit";
    }
    throw std::logic_error("unreachable");
}

PolicyKind policy_kind_from_name(const std::string &name) {
    if (name == "wait_k") return PolicyKind::WaitK;
    if (name == "alignatt") return PolicyKind::AlignAtt;
    if (name == "intermixed") return PolicyKind::Intermixed;
    if (name == "intermixed+early_exit") return PolicyKind::IntermixedEarlyExit;
    throw std::invalid_argument("unknown policy: " + name);
}

WaitEmit wait_k_decision(int heard_chunks, int emitted_tokens, int k) {
    if (heard_chunks < 1 || emitted_tokens < 0 || k < 0) {
        throw std::invalid_argument("bad wait-k inputs");
    }
    return heard_chunks > k + emitted_tokens ? WaitEmit::Emit : WaitEmit::Wait;
}

WaitEmit alignatt_decision(int peak_chunk, int heard_chunks, int window) {
    if (peak_chunk < 1 || peak_chunk > heard_chunks || window < 1) {
        throw std::invalid_argument("bad alignatt inputs");
    }
    return peak_chunk > heard_chunks - window ? WaitEmit::Wait : WaitEmit::Emit;
}

void apply_wait_penalty(std::vector<double> &logits, TokenId wait_id, double kappa) {
    if (wait_id < 0 || wait_id >= static_cast<TokenId>(logits.size())) {
        throw std::out_of_range("wait id outside logits");
    }
    if (!std::isfinite(kappa)) throw std::invalid_argument("non-finite penalty");
    logits[wait_id] -= kappa;
}

WaitEmit early_exit_decision(double wait_logit, double emit_logit, double nu) {
    if (!std::isfinite(wait_logit) || !std::isfinite(emit_logit) || !std::isfinite(nu)) {
        throw std::invalid_argument("non-finite early-exit inputs");
    }
    return wait_logit - nu > emit_logit ? WaitEmit::Wait : WaitEmit::Emit;
}

int argmax_lowest(const std::vector<double> &values) {
    if (values.empty()) throw std::invalid_argument("empty argmax");
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

int argmax_excluding(const std::vector<double> &values, int excluded) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(values.size()); ++i) {
        if (i == excluded) continue;
        if (best < 0 || values[i] > values[best]) best = i;
    }
    if (best < 0) throw std::invalid_argument("nothing left to emit");
    return best;
}

} // namespace intermix
