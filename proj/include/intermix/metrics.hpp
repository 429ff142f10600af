#pragma once

#include <string>
#include <vector>

#include "intermix/core.hpp"

namespace intermix {

enum class ReferenceLengthMode : uint8_t { Hypothesis, Reference };

// Average logical latency: mean emission time relative to a diagonal that
// spreads the emitted tokens evenly over the audio, token i due at
// i * T_sec / U. Flush emissions carry time T_sec.
double average_logical_latency(const EmissionLog &log);

// Average lagging against the staircase baseline (i-1)/gamma, counted up
// to the first token emitted at or after the end of the audio.
double average_lagging(const EmissionLog &log, ReferenceLengthMode mode = ReferenceLengthMode::Hypothesis,
                       int reference_length = 0);

// Length-adaptive average lagging: the staircase rate uses
// max(hypothesis length, reference length).
double laal(const EmissionLog &log, int hyp_len, int ref_len);

// Model calls (waits included) per emitted token; the energy proxy.
double calls_per_output_token(const EmissionLog &log);
double policy_calls_per_output_token(const EmissionLog &log);

struct QualityReport {
    double exact_match_rate = 0.0;
    double mean_similarity = 0.0; // 1 - edit_distance / max_len
};

int edit_distance(const std::vector<TokenId> &a, const std::vector<TokenId> &b);
QualityReport quality_proxy(const std::vector<TokenId> &hyp, const std::vector<TokenId> &ref);

struct LatencyReport {
    double all_seconds = 0.0;
    double al_seconds = 0.0;
    double laal_seconds = 0.0;
    std::vector<double> per_utterance_all;
    std::vector<double> per_utterance_al;
    std::vector<double> per_utterance_laal;
};

// Corpus aggregation: ALL is token-weighted, AL and LAAL average one value
// per utterance.
LatencyReport corpus_latency(const std::vector<EmissionLog> &logs,
                             const std::vector<int> &reference_lengths);

QualityReport corpus_quality(const std::vector<std::vector<TokenId>> &hyps,
                             const std::vector<std::vector<TokenId>> &refs);

// One CSV row per evaluated configuration.
struct ReportRow {
    std::string policy;
    double parameter = 0.0;
    std::string corpus;
    double all_s = 0.0;
    double al_s = 0.0;
    double laal_s = 0.0;
    double calls_per_token = 0.0;
    double policy_calls_per_token = 0.0;
    double exact_match = 0.0;
    double similarity = 0.0;
};

std::string report_csv_header();
std::string report_csv_row(const ReportRow &row);

} // namespace intermix
