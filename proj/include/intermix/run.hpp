#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intermix/decode.hpp"
#include "intermix/metrics.hpp"
#include "intermix/model.hpp"
#include "intermix/synth.hpp"

namespace intermix {

// A compiled utterance ready for training: the step supervision, the audio
// it came from and the plain target text.
struct TrainingExample {
    Supervision supervision;
    FrameStream stream;
    std::vector<TokenId> target;
};

TrainingExample compile_example(const SynthExample &ex, const Vocabulary &vocab);
std::vector<TrainingExample> compile_corpus(const std::vector<SynthExample> &corpus,
                                            const Vocabulary &vocab);
// Same, but through a premature word-level corruption of the alignments.
std::vector<TrainingExample> compile_corpus_corrupt(const std::vector<SynthExample> &corpus,
                                                    const Vocabulary &vocab, double fraction,
                                                    uint64_t seed);
// Same, but each example's words are held back by a seeded random delay in
// [0, max_extra_chunks]. Mixing latency profiles keeps the trained wait
// probabilities graded instead of saturated, so wait penalties at decode
// time move the latency smoothly. `delay_weights`, when non-empty, gives
// the relative probability of each delay value (size max_extra_chunks + 1);
// by default the delay is uniform. Shaping the tail of this distribution
// shapes the post-speech wait margins, and with them the penalty levels at
// which emissions move earlier.
std::vector<TrainingExample> compile_corpus_delayed(const std::vector<SynthExample> &corpus,
                                                    const Vocabulary &vocab, int max_extra_chunks,
                                                    uint64_t seed,
                                                    const std::vector<double> &delay_weights = {});
// The delay transform on already-compiled examples, so it composes with any
// alignment source (gold or corrupted).
std::vector<TrainingExample> delay_emissions(std::vector<TrainingExample> examples,
                                             const Vocabulary &vocab, int max_extra_chunks,
                                             uint64_t seed,
                                             const std::vector<double> &delay_weights = {});

struct TrainConfig {
    int steps = 2000;
    int batch_size = 8;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double policy_weight = 1.0; // early-exit head loss weight
    bool cosine_decay = true;   // cosine learning-rate decay to zero
    uint64_t seed = 1;
    int log_every = 0; // 0 keeps training silent
};

// Seeded Adam over per-example mean-step losses. Throws if the loss stops
// being finite.
void train(IntermixedModel &model, const std::vector<TrainingExample> &examples,
           const TrainConfig &cfg);
void train(CrossAttnModel &model, const std::vector<TrainingExample> &examples,
           const TrainConfig &cfg);

struct EvalResult {
    LatencyReport latency;
    QualityReport quality;
    double calls_per_token = 0.0;
    double policy_calls_per_token = 0.0;
    int truncated = 0; // decodes that hit an emission cap
    std::vector<EmissionLog> logs;
    std::vector<std::vector<TokenId>> hypotheses;
};

EvalResult evaluate(StepModel &model, const std::vector<SynthExample> &corpus,
                    const DecodeOptions &opts);

ReportRow make_report_row(const std::string &policy, double parameter, const std::string &corpus,
                          const EvalResult &result);

// Spearman rank correlation; ranks tie-break by position (inputs here are
// strictly ordered when the trends hold).
double spearman_rho(const std::vector<double> &a, const std::vector<double> &b);

} // namespace intermix
