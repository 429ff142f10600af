#include "intermix/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

namespace intermix {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

TrainingExample compile_with_alignment(const SynthExample &ex, const PhraseAlignment &alignment,
                                       const Vocabulary &vocab) {
    const int source_len = static_cast<int>(ex.source_tokens.size());
    const int target_len = static_cast<int>(ex.target_tokens.size());
    PhraseAlignment repaired = validate_and_repair(alignment, source_len, target_len);
    std::vector<int> anchors = anchor_target_words(repaired, target_len);
    TrainingExample out;
    out.supervision =
        compile_step_sequence(anchors, ex.word_end_frames, ex.frames, ex.target_tokens, vocab);
    out.stream = ex.frames;
    out.target = ex.target_tokens;
    return out;
}

// Seeded Adam over whatever per-example gradient callback the caller wires
// in. The callback adds this example's gradient into the accumulator and
// returns its loss.
void adam_train(std::vector<Param> &params, int n_examples, const TrainConfig &cfg,
                const std::function<double(int, std::vector<Mat> &)> &example_grad) {
    if (n_examples < 1) throw std::invalid_argument("empty training set");
    if (cfg.steps < 1 || cfg.batch_size < 1) throw std::invalid_argument("bad training schedule");
    std::vector<Mat> grads, m, v;
    for (const Param &p : params) {
        grads.emplace_back(p.value.rows, p.value.cols);
        m.emplace_back(p.value.rows, p.value.cols);
        v.emplace_back(p.value.rows, p.value.cols);
    }
    std::mt19937_64 rng(cfg.seed);
    for (int step = 1; step <= cfg.steps; ++step) {
        for (Mat &g : grads) std::fill(g.v.begin(), g.v.end(), 0.0);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            loss += example_grad(static_cast<int>(rng() % n_examples), grads);
        }
        loss /= cfg.batch_size;
        if (!std::isfinite(loss)) {
            throw std::runtime_error("training diverged at step " + std::to_string(step));
        }
        const double scale = 1.0 / cfg.batch_size;
        double lr = cfg.lr;
        if (cfg.cosine_decay) {
            lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * (step - 1) / cfg.steps));
        }
        const double bc1 = 1.0 - std::pow(cfg.beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.beta2, step);
        for (size_t i = 0; i < params.size(); ++i) {
            double *p = params[i].value.v.data();
            double *gm = m[i].v.data();
            double *gv = v[i].v.data();
            const double *g = grads[i].v.data();
            const size_t n = params[i].value.v.size();
            for (size_t k = 0; k < n; ++k) {
                const double gk = g[k] * scale;
                gm[k] = cfg.beta1 * gm[k] + (1.0 - cfg.beta1) * gk;
                gv[k] = cfg.beta2 * gv[k] + (1.0 - cfg.beta2) * gk * gk;
                p[k] -= lr * (gm[k] / bc1) / (std::sqrt(gv[k] / bc2) + cfg.eps);
            }
        }
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            std::fprintf(stderr, "step %d loss %.4f\n", step, loss);
        }
    }
}

} // namespace

TrainingExample compile_example(const SynthExample &ex, const Vocabulary &vocab) {
    return compile_with_alignment(ex, ex.gold_alignment, vocab);
}

std::vector<TrainingExample> compile_corpus(const std::vector<SynthExample> &corpus,
                                            const Vocabulary &vocab) {
    std::vector<TrainingExample> out;
    out.reserve(corpus.size());
    for (const SynthExample &ex : corpus) out.push_back(compile_example(ex, vocab));
    return out;
}

std::vector<TrainingExample> compile_corpus_corrupt(const std::vector<SynthExample> &corpus,
                                                    const Vocabulary &vocab, double fraction,
                                                    uint64_t seed) {
    std::vector<TrainingExample> out;
    out.reserve(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        const SynthExample &ex = corpus[i];
        PhraseAlignment corrupted =
            corrupt_alignment(ex.gold_alignment, CorruptionMode::PrematureWordLevel, fraction,
                              static_cast<int>(ex.source_tokens.size()), mix_seed(seed, i));
        out.push_back(compile_with_alignment(ex, corrupted, vocab));
    }
    return out;
}

std::vector<TrainingExample> compile_corpus_delayed(const std::vector<SynthExample> &corpus,
                                                    const Vocabulary &vocab, int max_extra_chunks,
                                                    uint64_t seed,
                                                    const std::vector<double> &delay_weights) {
    return delay_emissions(compile_corpus(corpus, vocab), vocab, max_extra_chunks, seed,
                           delay_weights);
}

std::vector<TrainingExample> delay_emissions(std::vector<TrainingExample> examples,
                                             const Vocabulary &vocab, int max_extra_chunks,
                                             uint64_t seed,
                                             const std::vector<double> &delay_weights) {
    if (max_extra_chunks < 0) throw std::invalid_argument("negative emission delay");
    std::vector<double> cdf;
    if (!delay_weights.empty()) {
        if (static_cast<int>(delay_weights.size()) != max_extra_chunks + 1) {
            throw std::invalid_argument("need one delay weight per delay value");
        }
        double total_w = 0.0;
        for (double w : delay_weights) {
            if (w < 0.0) throw std::invalid_argument("negative delay weight");
            total_w += w;
        }
        if (total_w <= 0.0) throw std::invalid_argument("delay weights sum to zero");
        double acc = 0.0;
        for (double w : delay_weights) cdf.push_back((acc += w) / total_w);
    }
    for (size_t i = 0; i < examples.size(); ++i) {
        std::mt19937_64 rng(mix_seed(seed, i));
        int extra;
        if (cdf.empty()) {
            extra = static_cast<int>(rng() % (max_extra_chunks + 1));
        } else {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            extra = 0;
            while (extra < max_extra_chunks && u >= cdf[extra]) ++extra;
        }
        if (extra == 0) continue;
        TrainingExample &ex = examples[i];
        const int total = ex.stream.num_chunks();
        std::vector<int> delayed = ex.supervision.word_emit_chunk;
        for (size_t j = 0; j + 1 < delayed.size(); ++j) {
            delayed[j] = std::min(delayed[j] + extra, total);
        }
        ex.supervision = supervision_from_emit_chunks(delayed, ex.target, total, vocab);
    }
    return examples;
}

void train(IntermixedModel &model, const std::vector<TrainingExample> &examples,
           const TrainConfig &cfg) {
    adam_train(model.params(), static_cast<int>(examples.size()), cfg,
               [&](int i, std::vector<Mat> &grads) {
                   std::vector<Mat> g;
                   double loss = model.loss_and_gradient(examples[i].supervision,
                                                         examples[i].stream, cfg.policy_weight, g);
                   const double inv = 1.0 / examples[i].supervision.steps.steps.size();
                   for (size_t k = 0; k < grads.size(); ++k) {
                       for (size_t j = 0; j < g[k].v.size(); ++j) grads[k].v[j] += inv * g[k].v[j];
                   }
                   return loss * inv;
               });
}

void train(CrossAttnModel &model, const std::vector<TrainingExample> &examples,
           const TrainConfig &cfg) {
    adam_train(model.params(), static_cast<int>(examples.size()), cfg,
               [&](int i, std::vector<Mat> &grads) {
                   std::vector<Mat> g;
                   double loss = model.loss_and_gradient(examples[i].target, examples[i].stream, g);
                   const double inv = 1.0 / examples[i].target.size();
                   for (size_t k = 0; k < grads.size(); ++k) {
                       for (size_t j = 0; j < g[k].v.size(); ++j) grads[k].v[j] += inv * g[k].v[j];
                   }
                   return loss * inv;
               });
}

EvalResult evaluate(StepModel &model, const std::vector<SynthExample> &corpus,
                    const DecodeOptions &opts) {
    if (corpus.empty()) throw std::invalid_argument("empty corpus");
    EvalResult result;
    std::vector<int> ref_lengths;
    std::vector<std::vector<TokenId>> refs;
    long model_calls = 0, policy_calls = 0;
    size_t tokens = 0;
    for (const SynthExample &ex : corpus) {
        DecodeResult d;
        try {
            d = stream_decode(model, ex.frames, opts);
        } catch (TruncatedDecode &t) {
            d = std::move(t.partial);
            ++result.truncated;
        }
        model_calls += d.log.model_calls;
        policy_calls += d.log.policy_calls;
        tokens += d.tokens.size();
        result.hypotheses.push_back(std::move(d.tokens));
        result.logs.push_back(std::move(d.log));
        ref_lengths.push_back(static_cast<int>(ex.target_tokens.size()));
        refs.push_back(ex.target_tokens);
    }
    result.latency = corpus_latency(result.logs, ref_lengths);
    result.quality = corpus_quality(result.hypotheses, refs);
    if (tokens > 0) {
        result.calls_per_token = static_cast<double>(model_calls) / tokens;
        result.policy_calls_per_token = static_cast<double>(policy_calls) / tokens;
    }
    return result;
}

ReportRow make_report_row(const std::string &policy, double parameter, const std::string &corpus,
                          const EvalResult &result) {
    ReportRow row;
    row.policy = policy;
    row.parameter = parameter;
    row.corpus = corpus;
    row.all_s = result.latency.all_seconds;
    row.al_s = result.latency.al_seconds;
    row.laal_s = result.latency.laal_seconds;
    row.calls_per_token = result.calls_per_token;
    row.policy_calls_per_token = result.policy_calls_per_token;
    row.exact_match = result.quality.exact_match_rate;
    row.similarity = result.quality.mean_similarity;
    return row;
}

double spearman_rho(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("bad rank inputs");
    auto ranks = [](const std::vector<double> &x) {
        std::vector<int> order(x.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int i, int j) { return x[i] < x[j]; });
        std::vector<double> r(x.size());
        for (size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
        return r;
    };
    std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double d2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

} // namespace intermix
