#include "intermix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace intermix {

namespace {

using json = nlohmann::json;

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    // splitmix64 over the pair, so each example draws from its own stream.
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double next_gaussian(std::mt19937_64 &rng) {
    // Box-Muller on explicit uniforms; keeps draws reproducible across
    // standard libraries.
    double u1 = (rng() >> 11) * 0x1p-53 + 0x1p-54;
    double u2 = (rng() >> 11) * 0x1p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Fixed per-token feature direction, shared by every corpus of the same
// dimensionality.
std::vector<double> token_feature(TokenId token, int dim) {
    std::mt19937_64 rng(0xa11ce0000ULL + static_cast<uint64_t>(token) * 7919ULL + dim);
    std::vector<double> v(dim);
    for (double &x : v) x = next_gaussian(rng);
    return v;
}

// Fixed lexical permutation over the non-<EOS> tokens; depends only on the
// vocabulary size so train and held-out corpora share the same task.
std::vector<TokenId> lexical_map(int vocab_size) {
    std::vector<TokenId> map(vocab_size - 1);
    std::iota(map.begin(), map.end(), 0);
    std::mt19937_64 rng(0x1e81ca1ULL + vocab_size);
    for (int i = static_cast<int>(map.size()) - 1; i > 0; --i) {
        std::swap(map[i], map[rng() % (i + 1)]);
    }
    return map;
}

std::vector<Span> segment_phrases(const std::vector<TokenId> &source, int max_phrase_len) {
    std::vector<Span> phrases;
    int pos = 0;
    int n = static_cast<int>(source.size());
    while (pos < n) {
        int len = 1 + source[pos] % max_phrase_len;
        len = std::min(len, n - pos);
        phrases.push_back({pos, pos + len - 1});
        pos += len;
    }
    return phrases;
}

std::vector<int> phrase_order(size_t num_phrases, ReorderMode mode) {
    std::vector<int> order(num_phrases);
    std::iota(order.begin(), order.end(), 0);
    switch (mode) {
    case ReorderMode::Monotonic:
        break;
    case ReorderMode::LocalSwap:
        for (size_t i = 0; i + 1 < num_phrases; i += 2) std::swap(order[i], order[i + 1]);
        break;
    case ReorderMode::BlockReorder:
        // The last source phrase is translated first, like a clause-final
        // verb that leads the target sentence.
        if (num_phrases > 1) {
            std::rotate(order.begin(), order.end() - 1, order.end());
        }
        break;
    }
    return order;
}

} // namespace

std::string reorder_mode_name(ReorderMode mode) {
    switch (mode) {
    case ReorderMode::Monotonic: return "monotonic";
    case ReorderMode::LocalSwap: return "local_swap";
    case ReorderMode::BlockReorder: return "block_reorder";
    }
    throw std::logic_error("unreachable");
}

ReorderMode reorder_mode_from_name(const std::string &name) {
    if (name == "monotonic") return ReorderMode::Monotonic;
    if (name == "local_swap") return ReorderMode::LocalSwap;
    if (name == "block_reorder") return ReorderMode::BlockReorder;
    throw std::invalid_argument("unknown reorder mode: " + name);
}

void SynthConfig::validate() const {
    if (vocab_size < 3) throw std::invalid_argument("vocab_size too small");
    if (min_source_len < 1 || max_source_len < min_source_len) {
        throw std::invalid_argument("bad source length range");
    }
    if (frames_per_source_token_jitter >= frames_per_source_token_mean) {
        throw std::invalid_argument("frame jitter must be below the mean");
    }
    if (frames_per_chunk < 1 || chunk_ms < 1 || frame_dim < 1) {
        throw std::invalid_argument("bad stream geometry");
    }
    if (max_phrase_len < 1 || silence_prefix_chunks < 0 || silence_suffix_chunks < 0) {
        throw std::invalid_argument("bad phrase/silence settings");
    }
}

std::vector<SynthExample> generate_corpus(const SynthConfig &config, int n) {
    config.validate();
    if (n < 1) throw std::invalid_argument("need at least one example");

    const Vocabulary vocab = config.vocabulary();
    const std::vector<TokenId> lex = lexical_map(config.vocab_size);
    std::vector<SynthExample> corpus;
    corpus.reserve(n);

    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix_seed(config.seed, i));
        SynthExample ex;

        int len = config.min_source_len +
                  static_cast<int>(rng() % (config.max_source_len - config.min_source_len + 1));
        ex.source_tokens.resize(len);
        for (TokenId &t : ex.source_tokens) {
            t = static_cast<TokenId>(rng() % (config.vocab_size - 1));
        }

        std::vector<Span> phrases = segment_phrases(ex.source_tokens, config.max_phrase_len);
        std::vector<int> order = phrase_order(phrases.size(), config.reorder_mode);

        int target_pos = 0;
        for (int pi : order) {
            const Span &src = phrases[pi];
            Span tgt{target_pos, target_pos + src.length() - 1};
            for (int s = src.begin; s <= src.end; ++s) {
                ex.target_tokens.push_back(lex[ex.source_tokens[s]]);
            }
            target_pos = tgt.end + 1;
            ex.gold_alignment.pairs.push_back({src, tgt, true});
        }
        ex.target_tokens.push_back(vocab.eos_id);
        ex.gold_alignment.pairs.push_back(
            {Span{len - 1, len - 1}, Span{target_pos, target_pos}, true});

        ex.frames.frames_per_chunk = config.frames_per_chunk;
        ex.frames.chunk_ms = config.chunk_ms;
        int jitter = config.frames_per_source_token_jitter;
        for (TokenId t : ex.source_tokens) {
            int count = config.frames_per_source_token_mean;
            if (jitter > 0) count += static_cast<int>(rng() % (2 * jitter + 1)) - jitter;
            std::vector<double> base = token_feature(t, config.frame_dim);
            for (int f = 0; f < count; ++f) {
                std::vector<double> frame = base;
                for (double &x : frame) x += config.frame_noise_std * next_gaussian(rng);
                ex.frames.frames.push_back(std::move(frame));
            }
            ex.word_end_frames.push_back(static_cast<int>(ex.frames.frames.size()));
        }

        if (config.silence_suffix_chunks > 0) {
            int suffix = static_cast<int>(rng() % (config.silence_suffix_chunks + 1));
            const int extra = suffix * config.frames_per_chunk;
            for (int f = 0; f < extra; ++f) {
                std::vector<double> frame(config.frame_dim);
                for (double &x : frame) x = 0.01 * next_gaussian(rng);
                ex.frames.frames.push_back(std::move(frame));
            }
        }
        if (config.silence_prefix_chunks > 0) {
            int prefix = static_cast<int>(rng() % (config.silence_prefix_chunks + 1));
            ex = inject_silence(ex, prefix, mix_seed(config.seed, 0x5113000ULL + i));
        }
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

SynthExample inject_silence(const SynthExample &ex, int chunks, uint64_t seed) {
    if (chunks < 0) throw std::invalid_argument("negative silence prefix");
    if (chunks == 0) return ex;
    SynthExample out = ex;
    const int dim = ex.frames.frames.empty() ? 1 : static_cast<int>(ex.frames.frames[0].size());
    const int prefix_frames = chunks * ex.frames.frames_per_chunk;
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> frames;
    frames.reserve(prefix_frames + ex.frames.frames.size());
    for (int f = 0; f < prefix_frames; ++f) {
        std::vector<double> frame(dim);
        for (double &x : frame) x = 0.01 * next_gaussian(rng);
        frames.push_back(std::move(frame));
    }
    frames.insert(frames.end(), ex.frames.frames.begin(), ex.frames.frames.end());
    out.frames.frames = std::move(frames);
    for (int &end : out.word_end_frames) end += prefix_frames;
    return out;
}

PhraseAlignment corrupt_alignment(const PhraseAlignment &a, CorruptionMode mode,
                                  double fraction, int source_len, uint64_t seed) {
    if (mode != CorruptionMode::PrematureWordLevel) {
        throw std::invalid_argument("unknown corruption mode");
    }
    if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("fraction outside [0, 1]");
    std::mt19937_64 rng(seed);
    PhraseAlignment out;
    for (const PhrasePair &p : a.pairs) {
        if (!p.valid) continue;
        for (int j = p.target.begin; j <= p.target.end; ++j) {
            int anchor = p.source.end;
            double coin = (rng() >> 11) * 0x1p-53;
            if (coin < fraction && anchor > 0) {
                anchor = static_cast<int>(rng() % anchor);
            }
            out.pairs.push_back({Span{anchor, anchor}, Span{j, j}, true});
        }
    }
    (void)source_len;
    return out;
}

PhraseAlignment GoldAlignmentProvider::align(const std::vector<TokenId> &source,
                                             const std::vector<TokenId> &target) {
    for (const SynthExample &ex : corpus_) {
        if (ex.source_tokens == source && ex.target_tokens == target) return ex.gold_alignment;
    }
    throw std::invalid_argument("utterance not found in the gold corpus");
}

namespace {

json span_to_json(const Span &s) { return json::array({s.begin, s.end}); }
Span span_from_json(const json &j) { return Span{j.at(0).get<int>(), j.at(1).get<int>()}; }

json tokens_to_json(const std::vector<TokenId> &tokens, const Vocabulary &vocab) {
    json arr = json::array();
    for (TokenId t : tokens) arr.push_back(vocab.token_string(t));
    return arr;
}

std::vector<TokenId> tokens_from_json(const json &arr, const Vocabulary &vocab) {
    std::vector<TokenId> tokens;
    for (const auto &s : arr) tokens.push_back(vocab.token_from_string(s.get<std::string>()));
    return tokens;
}

} // namespace

void save_corpus_jsonl(const std::vector<SynthExample> &corpus, const SynthConfig &config,
                       const std::string &path) {
    const Vocabulary vocab = config.vocabulary();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const SynthExample &ex : corpus) {
        json j;
        j["source"] = tokens_to_json(ex.source_tokens, vocab);
        j["target"] = tokens_to_json(ex.target_tokens, vocab);
        // Canonical gold supervision for the utterance.
        PhraseAlignment repaired = validate_and_repair(
            ex.gold_alignment, static_cast<int>(ex.source_tokens.size()),
            static_cast<int>(ex.target_tokens.size()));
        Supervision sup = compile_step_sequence(
            anchor_target_words(repaired, static_cast<int>(ex.target_tokens.size())),
            ex.word_end_frames, ex.frames, ex.target_tokens, vocab);
        j["steps"] = tokens_to_json(sup.steps.steps, vocab);
        j["chunk_ms"] = ex.frames.chunk_ms;
        j["frames_per_chunk"] = ex.frames.frames_per_chunk;
        j["word_end_frames"] = ex.word_end_frames;
        json pairs = json::array();
        for (const PhrasePair &p : ex.gold_alignment.pairs) {
            pairs.push_back({{"src", span_to_json(p.source)},
                             {"tgt", span_to_json(p.target)},
                             {"valid", p.valid}});
        }
        j["alignment"] = pairs;
        j["frames"] = ex.frames.frames;
        out << j.dump() << "\n";
    }
}

std::vector<SynthExample> load_corpus_jsonl(const std::string &path, const SynthConfig &config) {
    const Vocabulary vocab = config.vocabulary();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<SynthExample> corpus;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        SynthExample ex;
        ex.source_tokens = tokens_from_json(j.at("source"), vocab);
        ex.target_tokens = tokens_from_json(j.at("target"), vocab);
        ex.frames.chunk_ms = j.at("chunk_ms").get<int>();
        ex.frames.frames_per_chunk = j.at("frames_per_chunk").get<int>();
        ex.word_end_frames = j.at("word_end_frames").get<std::vector<int>>();
        for (const auto &pj : j.at("alignment")) {
            ex.gold_alignment.pairs.push_back({span_from_json(pj.at("src")),
                                               span_from_json(pj.at("tgt")),
                                               pj.at("valid").get<bool>()});
        }
        ex.frames.frames = j.at("frames").get<std::vector<std::vector<double>>>();
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

void save_config_json(const SynthConfig &config, const std::string &path) {
    json j;
    j["vocab_size"] = config.vocab_size;
    j["min_source_len"] = config.min_source_len;
    j["max_source_len"] = config.max_source_len;
    j["frames_per_source_token_mean"] = config.frames_per_source_token_mean;
    j["frames_per_source_token_jitter"] = config.frames_per_source_token_jitter;
    j["frame_dim"] = config.frame_dim;
    j["frames_per_chunk"] = config.frames_per_chunk;
    j["chunk_ms"] = config.chunk_ms;
    j["reorder_mode"] = reorder_mode_name(config.reorder_mode);
    j["max_phrase_len"] = config.max_phrase_len;
    j["silence_prefix_chunks"] = config.silence_prefix_chunks;
    j["silence_suffix_chunks"] = config.silence_suffix_chunks;
    j["frame_noise_std"] = config.frame_noise_std;
    j["seed"] = config.seed;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

SynthConfig load_config_json(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    json j = json::parse(in);
    SynthConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.min_source_len = j.value("min_source_len", c.min_source_len);
    c.max_source_len = j.value("max_source_len", c.max_source_len);
    c.frames_per_source_token_mean =
        j.value("frames_per_source_token_mean", c.frames_per_source_token_mean);
    c.frames_per_source_token_jitter =
        j.value("frames_per_source_token_jitter", c.frames_per_source_token_jitter);
    c.frame_dim = j.value("frame_dim", c.frame_dim);
    c.frames_per_chunk = j.value("frames_per_chunk", c.frames_per_chunk);
    c.chunk_ms = j.value("chunk_ms", c.chunk_ms);
    if (j.contains("reorder_mode")) {
        c.reorder_mode = reorder_mode_from_name(j["reorder_mode"].get<std::string>());
    }
    c.max_phrase_len = j.value("max_phrase_len", c.max_phrase_len);
    c.silence_prefix_chunks = j.value("silence_prefix_chunks", c.silence_prefix_chunks);
    c.silence_suffix_chunks = j.value("silence_suffix_chunks", c.silence_suffix_chunks);
    c.frame_noise_std = j.value("frame_noise_std", c.frame_noise_std);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

} // namespace intermix
