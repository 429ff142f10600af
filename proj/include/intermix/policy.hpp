#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intermix/core.hpp"

namespace intermix {

enum class PolicyKind : uint8_t { WaitK, AlignAtt, Intermixed, IntermixedEarlyExit };

std::string policy_kind_name(PolicyKind kind);
PolicyKind policy_kind_from_name(const std::string &name);

// Wait penalties in the log-weight domain: kappa on the step model's wait
// logit, nu on the early-exit head's wait logit. Negative values encourage
// waiting.
struct PenaltyConfig {
    double kappa = 0.0;
    double nu = 0.0;
};

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Intermixed;
    PenaltyConfig penalties;
    int wait_k = 1;          // chunks, for WaitK
    int alignatt_window = 8; // encoder chunk positions, for AlignAtt

    bool uses_early_exit() const { return kind == PolicyKind::IntermixedEarlyExit; }
};

// Fixed wait-k rule: emit iff heard_chunks > k + emitted_tokens.
WaitEmit wait_k_decision(int heard_chunks, int emitted_tokens, int k);

// AlignAtt rule: wait iff the attention peak falls within the last
// `window` heard positions (peak > heard - window); the boundary itself
// emits.
WaitEmit alignatt_decision(int peak_chunk, int heard_chunks, int window);

// Subtracts kappa from the wait logit, leaving all other logits untouched.
void apply_wait_penalty(std::vector<double> &logits, TokenId wait_id, double kappa);

// Early-exit rule: wait iff wait_logit - nu > emit_logit; ties defer to
// the step model.
WaitEmit early_exit_decision(double wait_logit, double emit_logit, double nu);

// Argmax with ties resolved to the lowest index.
int argmax_lowest(const std::vector<double> &values);
// Argmax over everything except `excluded`, ties to the lowest index.
int argmax_excluding(const std::vector<double> &values, int excluded);

} // namespace intermix
