#include "intermix/model.hpp"

#include "intermix/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace intermix {

namespace {

constexpr double kMaskedOut = -1e30;

// Box-Muller on explicit 64-bit uniforms, so initialization does not depend
// on the standard library's distribution implementation.
double next_gaussian(std::mt19937_64 &rng) {
    double u1 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    double u2 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Builds the parameter vector in a fixed order, or just counts it when
// `out` is null, so index layout and storage never diverge.
struct ParamBuilder {
    std::vector<Param> *out = nullptr;
    std::mt19937_64 rng{0};

    int weight(const std::string &name, int r, int c, double std_dev) {
        int id = count++;
        if (out) {
            Param p{name, Mat(r, c)};
            for (double &x : p.value.v) x = std_dev * next_gaussian(rng);
            out->push_back(std::move(p));
        }
        return id;
    }
    int constant(const std::string &name, int r, int c, double fill) {
        int id = count++;
        if (out) {
            Param p{name, Mat(r, c)};
            for (double &x : p.value.v) x = fill;
            out->push_back(std::move(p));
        }
        return id;
    }
    int gain(const std::string &name, int c) { return constant(name, 1, c, 1.0); }
    int bias(const std::string &name, int c) { return constant(name, 1, c, 0.0); }

    int count = 0;
};

struct BlockIdx {
    int gain_attn;
    std::vector<int> wq, wk, wv;
    int wo, wo_b;
    int gain_mlp, w1, b1, w2, b2;
};

BlockIdx make_block(ParamBuilder &b, const std::string &prefix, int width, int heads,
                    int mlp_hidden) {
    BlockIdx idx;
    const int dh = width / heads;
    const double ws = 1.0 / std::sqrt(static_cast<double>(width));
    idx.gain_attn = b.gain(prefix + ".attn.gain", width);
    for (int h = 0; h < heads; ++h) {
        std::string hp = prefix + ".attn.h" + std::to_string(h);
        idx.wq.push_back(b.weight(hp + ".wq", width, dh, ws));
        idx.wk.push_back(b.weight(hp + ".wk", width, dh, ws));
        idx.wv.push_back(b.weight(hp + ".wv", width, dh, ws));
    }
    idx.wo = b.weight(prefix + ".attn.wo", width, width, ws);
    idx.wo_b = b.bias(prefix + ".attn.wo_b", width);
    idx.gain_mlp = b.gain(prefix + ".mlp.gain", width);
    idx.w1 = b.weight(prefix + ".mlp.w1", width, mlp_hidden, ws);
    idx.b1 = b.bias(prefix + ".mlp.b1", mlp_hidden);
    idx.w2 = b.weight(prefix + ".mlp.w2", mlp_hidden, width,
                      1.0 / std::sqrt(static_cast<double>(mlp_hidden)));
    idx.b2 = b.bias(prefix + ".mlp.b2", width);
    return idx;
}

Mat causal_mask(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) m.at(i, j) = kMaskedOut;
    }
    return m;
}

Tape::NodeId self_attention(Tape &t, Tape::NodeId x, const BlockIdx &idx,
                            const std::vector<Tape::NodeId> &pn, const Mat &mask, int heads,
                            int width) {
    const int dh = width / heads;
    Tape::NodeId n1 = t.rmsnorm(x, pn[idx.gain_attn]);
    std::vector<Tape::NodeId> headed;
    for (int h = 0; h < heads; ++h) {
        Tape::NodeId q = t.matmul(n1, pn[idx.wq[h]]);
        Tape::NodeId k = t.matmul(n1, pn[idx.wk[h]]);
        Tape::NodeId v = t.matmul(n1, pn[idx.wv[h]]);
        Tape::NodeId s = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
        headed.push_back(t.matmul(t.masked_softmax_rows(s, mask), v));
    }
    Tape::NodeId o = t.add_row_broadcast(t.matmul(t.concat_cols(headed), pn[idx.wo]), pn[idx.wo_b]);
    return t.add(x, o);
}

Tape::NodeId mlp_stage(Tape &t, Tape::NodeId x, const BlockIdx &idx,
                       const std::vector<Tape::NodeId> &pn) {
    Tape::NodeId n2 = t.rmsnorm(x, pn[idx.gain_mlp]);
    Tape::NodeId m = t.add_row_broadcast(t.matmul(n2, pn[idx.w1]), pn[idx.b1]);
    m = t.gelu(m);
    m = t.add_row_broadcast(t.matmul(m, pn[idx.w2]), pn[idx.b2]);
    return t.add(x, m);
}

Tape::NodeId apply_block(Tape &t, Tape::NodeId x, const BlockIdx &idx,
                         const std::vector<Tape::NodeId> &pn, const Mat &mask, int heads,
                         int width) {
    return mlp_stage(t, self_attention(t, x, idx, pn, mask, heads, width), idx, pn);
}

uint64_t fnv1a(uint64_t h, const void *data, size_t n) {
    const unsigned char *p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t hash_string(uint64_t h, const std::string &s) { return fnv1a(h, s.data(), s.size()); }

uint64_t hash_params(uint64_t h, const std::vector<Param> &params) {
    for (const Param &p : params) {
        h = hash_string(h, p.name);
        int shape[2] = {p.value.rows, p.value.cols};
        h = fnv1a(h, shape, sizeof(shape));
        h = fnv1a(h, p.value.v.data(), p.value.v.size() * sizeof(double));
    }
    return h;
}

nlohmann::json params_to_json(const std::vector<Param> &params) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Param &p : params) {
        arr.push_back({{"name", p.name}, {"rows", p.value.rows}, {"cols", p.value.cols},
                       {"data", p.value.v}});
    }
    return arr;
}

void params_from_json(const nlohmann::json &arr, std::vector<Param> &params) {
    if (!arr.is_array() || arr.size() != params.size()) {
        throw CheckpointError("checkpoint parameter list does not match the model");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const nlohmann::json &e = arr[i];
        if (e.at("name").get<std::string>() != params[i].name ||
            e.at("rows").get<int>() != params[i].value.rows ||
            e.at("cols").get<int>() != params[i].value.cols) {
            throw CheckpointError("checkpoint parameter " + params[i].name + " has a different shape");
        }
        std::vector<double> data = e.at("data").get<std::vector<double>>();
        if (data.size() != params[i].value.v.size()) {
            throw CheckpointError("checkpoint parameter " + params[i].name + " is truncated");
        }
        params[i].value.v = std::move(data);
    }
}

nlohmann::json read_checkpoint_json(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw CheckpointError("unreadable checkpoint " + path + ": " + e.what());
    }
    return j;
}

void write_atomically(const std::string &path, const std::string &body) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << body;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move " + tmp + " into place");
    }
}

// One model position per frame of a chunk slot (plus the end-of-audio
// position after the final chunk), or per text token.
struct PosRef {
    enum Kind { Frame, Token, Eoa } kind;
    int index; // global frame index, or ordinal into the layout's token list
};

struct Expansion {
    std::vector<PosRef> positions;
    std::vector<int> slot_final; // conditioning position of each slot
    std::vector<int> token_ids;
};

Expansion expand_layout(const std::vector<LayoutSlot> &layout, const FrameStream &stream,
                        bool at_stream_end, const Vocabulary &vocab) {
    if (layout.empty()) throw std::invalid_argument("empty input layout");
    const int total_frames = static_cast<int>(stream.frames.size());
    const int total_chunks = stream.num_chunks();
    Expansion ex;
    for (const LayoutSlot &slot : layout) {
        if (slot.kind == LayoutSlotKind::SpeechChunk) {
            const int c = slot.index;
            if (c < 1 || c > total_chunks) throw std::out_of_range("chunk index outside stream");
            const int begin = (c - 1) * stream.frames_per_chunk;
            const int end = std::min(c * stream.frames_per_chunk, total_frames);
            for (int f = begin; f < end; ++f) ex.positions.push_back({PosRef::Frame, f});
            if (c == total_chunks && at_stream_end) ex.positions.push_back({PosRef::Eoa, 0});
        } else {
            if (!vocab.is_text(slot.index)) throw std::out_of_range("token id outside vocabulary");
            ex.positions.push_back({PosRef::Token, static_cast<int>(ex.token_ids.size())});
            ex.token_ids.push_back(slot.index);
        }
        ex.slot_final.push_back(static_cast<int>(ex.positions.size()) - 1);
    }
    return ex;
}

Mat frames_to_mat(const FrameStream &stream, int frame_dim, int limit_frames) {
    const int n = std::min(limit_frames, static_cast<int>(stream.frames.size()));
    Mat f(n, frame_dim);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(stream.frames[i].size()) != frame_dim) {
            throw std::invalid_argument("frame dimensionality does not match the model");
        }
        std::copy(stream.frames[i].begin(), stream.frames[i].end(), f.row(i));
    }
    return f;
}

std::vector<int> iota_indices(int n) {
    std::vector<int> v(static_cast<size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

std::pair<double, double> StepModel::early_exit_wait_emit(const DecodeContext &) {
    throw std::logic_error("model has no early-exit head");
}

int StepModel::attention_peak(const DecodeContext &) {
    throw std::logic_error("model exposes no attention peak");
}

double step_cross_entropy(const std::vector<double> &logits, TokenId target,
                          const Vocabulary &vocab) {
    if (static_cast<int>(logits.size()) != vocab.size()) {
        throw std::invalid_argument("logits do not cover the augmented vocabulary");
    }
    if (target < 0 || target >= vocab.size()) throw std::out_of_range("bad target");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    return std::log(z) - (logits[target] - mx);
}

StepLossSplit step_cross_entropy_split(const std::vector<double> &logits, TokenId target,
                                       const Vocabulary &vocab) {
    if (static_cast<int>(logits.size()) != vocab.size()) {
        throw std::invalid_argument("logits do not cover the augmented vocabulary");
    }
    if (target < 0 || target >= vocab.size()) throw std::out_of_range("bad target");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z_text = 0.0;
    for (TokenId i = 0; i < vocab.num_text_tokens; ++i) z_text += std::exp(logits[i] - mx);
    const double z = z_text + std::exp(logits[vocab.wait_id] - mx);
    StepLossSplit split;
    if (vocab.is_wait(target)) {
        split.decision = std::log(z) - (logits[vocab.wait_id] - mx);
    } else {
        split.decision = std::log(z) - std::log(z_text);
        split.token = std::log(z_text) - (logits[target] - mx);
    }
    return split;
}

void ModelConfig::validate() const {
    if (width < 1 || num_layers < 1 || num_heads < 1 || mlp_hidden < 1 || frame_dim < 1 ||
        max_positions < 1) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (width % num_heads != 0) throw std::invalid_argument("width must divide into heads");
    if (early_exit_layer < 0 || early_exit_layer > num_layers) {
        throw std::invalid_argument("early-exit layer outside the stack");
    }
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
        throw std::invalid_argument("label smoothing outside [0,1)");
    }
}

namespace {

struct IntermixIdx {
    int tok_emb, pos_emb, frame_w, frame_b;
    std::vector<BlockIdx> blocks;
    int gain_final, head_w, head_b;
    int ee_gain = -1, ee_w = -1, ee_b = -1;
};

IntermixIdx intermix_layout_params(const ModelConfig &cfg, const Vocabulary &vocab,
                                   ParamBuilder &b) {
    IntermixIdx idx;
    const double ws = 1.0 / std::sqrt(static_cast<double>(cfg.width));
    idx.tok_emb = b.weight("tok_emb", vocab.num_text_tokens, cfg.width, 0.1);
    idx.pos_emb = b.weight("pos_emb", cfg.max_positions, cfg.width, 0.02);
    idx.frame_w = b.weight("frame_proj.w", cfg.frame_dim, cfg.width,
                           1.0 / std::sqrt(static_cast<double>(cfg.frame_dim)));
    idx.frame_b = b.bias("frame_proj.b", cfg.width);
    for (int l = 0; l < cfg.num_layers; ++l) {
        idx.blocks.push_back(
            make_block(b, "block" + std::to_string(l), cfg.width, cfg.num_heads, cfg.mlp_hidden));
    }
    idx.gain_final = b.gain("final.gain", cfg.width);
    idx.head_w = b.weight("head.w", cfg.width, vocab.size(), ws);
    idx.head_b = b.bias("head.b", vocab.size());
    if (cfg.early_exit_layer > 0) {
        idx.ee_gain = b.gain("early_exit.gain", cfg.width);
        idx.ee_w = b.weight("early_exit.w", cfg.width, 2, ws);
        idx.ee_b = b.bias("early_exit.b", 2);
    }
    return idx;
}

} // namespace

struct IntermixedModel::Forward {
    std::unique_ptr<Tape> tape;
    std::vector<Tape::NodeId> pn;
    std::vector<int> slot_final;
    Tape::NodeId logits = -1;
    Tape::NodeId ee_logits = -1;
};

IntermixedModel::IntermixedModel(ModelConfig config, Vocabulary vocab)
    : config_(config), vocab_(vocab) {
    config_.validate();
    if (vocab_.num_text_tokens < 2) throw std::invalid_argument("vocabulary too small");
    ParamBuilder b;
    b.out = &params_;
    b.rng.seed(config_.init_seed);
    intermix_layout_params(config_, vocab_, b);
}

IntermixedModel::Forward IntermixedModel::build(const std::vector<LayoutSlot> &layout,
                                                const FrameStream &stream, bool at_stream_end,
                                                int up_to_layer, bool main_head,
                                                bool exit_head) const {
    ParamBuilder counter;
    const IntermixIdx idx = intermix_layout_params(config_, vocab_, counter);
    if (exit_head && config_.early_exit_layer == 0) {
        throw std::logic_error("model has no early-exit head");
    }

    Expansion ex = expand_layout(layout, stream, at_stream_end, vocab_);
    const int n_pos = static_cast<int>(ex.positions.size());
    if (n_pos > config_.max_positions) {
        throw std::invalid_argument("input longer than the position table");
    }

    Forward fwd;
    fwd.tape = std::make_unique<Tape>();
    fwd.slot_final = std::move(ex.slot_final);
    Tape &t = *fwd.tape;
    for (const Param &p : params_) fwd.pn.push_back(t.leaf(p.value));

    Tape::NodeId frames = t.leaf(frames_to_mat(stream, config_.frame_dim,
                                               static_cast<int>(stream.frames.size())));
    Tape::NodeId proj =
        t.add_row_broadcast(t.matmul(frames, fwd.pn[idx.frame_w]), fwd.pn[idx.frame_b]);
    Tape::NodeId toks = -1;
    if (!ex.token_ids.empty()) toks = t.gather_rows(fwd.pn[idx.tok_emb], ex.token_ids);
    Tape::NodeId zero = t.leaf(Mat(1, config_.width));

    std::vector<std::pair<Tape::NodeId, int>> sources;
    sources.reserve(ex.positions.size());
    for (const PosRef &p : ex.positions) {
        switch (p.kind) {
        case PosRef::Frame: sources.emplace_back(proj, p.index); break;
        case PosRef::Token: sources.emplace_back(toks, p.index); break;
        case PosRef::Eoa: sources.emplace_back(zero, 0); break;
        }
    }
    Tape::NodeId x = t.add(t.assemble_rows(std::move(sources)),
                           t.gather_rows(fwd.pn[idx.pos_emb], iota_indices(n_pos)));

    const Mat mask = causal_mask(n_pos);
    for (int l = 0; l < up_to_layer; ++l) {
        x = apply_block(t, x, idx.blocks[l], fwd.pn, mask, config_.num_heads, config_.width);
        if (exit_head && l + 1 == config_.early_exit_layer) {
            Tape::NodeId ne = t.rmsnorm(x, fwd.pn[idx.ee_gain]);
            fwd.ee_logits =
                t.add_row_broadcast(t.matmul(ne, fwd.pn[idx.ee_w]), fwd.pn[idx.ee_b]);
        }
    }
    if (main_head) {
        Tape::NodeId nf = t.rmsnorm(x, fwd.pn[idx.gain_final]);
        fwd.logits = t.add_row_broadcast(t.matmul(nf, fwd.pn[idx.head_w]), fwd.pn[idx.head_b]);
    }
    return fwd;
}

std::vector<double> IntermixedModel::forward_step(const std::vector<LayoutSlot> &layout_prefix,
                                                  const FrameStream &stream,
                                                  bool at_stream_end) const {
    Forward f = build(layout_prefix, stream, at_stream_end, config_.num_layers, true, false);
    const Mat &logits = f.tape->value(f.logits);
    const int row = f.slot_final.back();
    return std::vector<double>(logits.row(row), logits.row(row) + logits.cols);
}

std::pair<double, double> IntermixedModel::early_exit_head(
    const std::vector<LayoutSlot> &layout_prefix, const FrameStream &stream,
    bool at_stream_end) const {
    Forward f = build(layout_prefix, stream, at_stream_end, config_.early_exit_layer, false, true);
    const Mat &logits = f.tape->value(f.ee_logits);
    const int row = f.slot_final.back();
    return {logits.at(row, 0), logits.at(row, 1)};
}

namespace {

std::vector<std::pair<int, int>> step_targets(const Supervision &sup,
                                              const std::vector<int> &slot_final) {
    if (sup.steps.steps.size() != sup.input_layout.size()) {
        throw std::invalid_argument("layout and step sequence lengths differ");
    }
    std::vector<std::pair<int, int>> targets;
    targets.reserve(sup.steps.steps.size());
    for (size_t i = 0; i < sup.steps.steps.size(); ++i) {
        targets.emplace_back(slot_final[i], sup.steps.steps[i]);
    }
    return targets;
}

// The chunk-arrival rows, where the wait/emit decision is made: steps whose
// conditioning slot is a speech chunk.
std::vector<std::pair<int, int>> decision_targets(const Supervision &sup,
                                                  const std::vector<int> &slot_final,
                                                  const Vocabulary &vocab) {
    std::vector<std::pair<int, int>> targets;
    for (size_t i = 0; i < sup.steps.steps.size(); ++i) {
        if (sup.input_layout[i].kind != LayoutSlotKind::SpeechChunk) continue;
        targets.emplace_back(slot_final[i], vocab.is_wait(sup.steps.steps[i]) ? 0 : 1);
    }
    return targets;
}

} // namespace

double IntermixedModel::step_sequence_loss(const Supervision &sup,
                                           const FrameStream &stream) const {
    Forward f = build(sup.input_layout, stream, true, config_.num_layers, true, false);
    Tape::NodeId ce = f.tape->cross_entropy(f.logits, step_targets(sup, f.slot_final),
                                            config_.label_smoothing);
    return f.tape->value(ce).at(0, 0);
}

double IntermixedModel::multitask_loss(const Supervision &sup, const FrameStream &stream,
                                       double policy_weight) const {
    const bool with_policy = policy_weight != 0.0 && has_early_exit();
    Forward f = build(sup.input_layout, stream, true, config_.num_layers, true, with_policy);
    Tape &t = *f.tape;
    Tape::NodeId loss = t.cross_entropy(f.logits, step_targets(sup, f.slot_final),
                                        config_.label_smoothing);
    if (with_policy) {
        Tape::NodeId pce =
            t.cross_entropy(f.ee_logits, decision_targets(sup, f.slot_final, vocab_));
        loss = t.add(loss, t.scale(pce, policy_weight));
    }
    return t.value(loss).at(0, 0);
}

double IntermixedModel::loss_and_gradient(const Supervision &sup, const FrameStream &stream,
                                          double policy_weight, std::vector<Mat> &grads) const {
    const bool with_policy = policy_weight != 0.0 && has_early_exit();
    Forward f = build(sup.input_layout, stream, true, config_.num_layers, true, with_policy);
    Tape &t = *f.tape;
    Tape::NodeId loss = t.cross_entropy(f.logits, step_targets(sup, f.slot_final),
                                        config_.label_smoothing);
    if (with_policy) {
        Tape::NodeId pce =
            t.cross_entropy(f.ee_logits, decision_targets(sup, f.slot_final, vocab_));
        loss = t.add(loss, t.scale(pce, policy_weight));
    }
    t.backward(loss);
    if (grads.size() != params_.size()) {
        grads.clear();
        for (const Param &p : params_) grads.emplace_back(p.value.rows, p.value.cols);
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        const Mat &g = t.gradient(f.pn[i]);
        for (size_t k = 0; k < g.v.size(); ++k) grads[i].v[k] += g.v[k];
    }
    return t.value(loss).at(0, 0);
}

std::vector<double> IntermixedModel::step_logits(const DecodeContext &ctx) {
    return forward_step(*ctx.layout, *ctx.stream, ctx.at_stream_end);
}

std::pair<double, double> IntermixedModel::early_exit_wait_emit(const DecodeContext &ctx) {
    return early_exit_head(*ctx.layout, *ctx.stream, ctx.at_stream_end);
}

namespace {

nlohmann::json intermix_config_json(const ModelConfig &c) {
    return {{"width", c.width},
            {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},
            {"mlp_hidden", c.mlp_hidden},
            {"frame_dim", c.frame_dim},
            {"max_positions", c.max_positions},
            {"early_exit_layer", c.early_exit_layer},
            {"label_smoothing", c.label_smoothing},
            {"init_seed", c.init_seed}};
}

ModelConfig intermix_config_from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.width = j.at("width").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.frame_dim = j.at("frame_dim").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.early_exit_layer = j.at("early_exit_layer").get<int>();
    c.label_smoothing = j.at("label_smoothing").get<double>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
}

uint64_t checkpoint_hash(const std::string &kind, const nlohmann::json &config,
                         int num_text_tokens, const std::vector<Param> &params) {
    uint64_t h = 1469598103934665603ULL;
    h = hash_string(h, kind);
    h = hash_string(h, config.dump());
    h = fnv1a(h, &num_text_tokens, sizeof(num_text_tokens));
    return hash_params(h, params);
}

} // namespace

void IntermixedModel::save(const std::string &path) const {
    nlohmann::json j;
    j["kind"] = "intermixed";
    j["config"] = intermix_config_json(config_);
    j["num_text_tokens"] = vocab_.num_text_tokens;
    j["params"] = params_to_json(params_);
    j["hash"] = checkpoint_hash("intermixed", j["config"], vocab_.num_text_tokens, params_);
    write_atomically(path, j.dump());
}

IntermixedModel IntermixedModel::load(const std::string &path) {
    nlohmann::json j = read_checkpoint_json(path);
    try {
        if (j.at("kind").get<std::string>() != "intermixed") {
            throw CheckpointError("checkpoint holds a different model kind");
        }
        ModelConfig cfg = intermix_config_from_json(j.at("config"));
        Vocabulary vocab = Vocabulary::make(j.at("num_text_tokens").get<int>());
        IntermixedModel model(cfg, vocab);
        params_from_json(j.at("params"), model.params_);
        uint64_t h = checkpoint_hash("intermixed", intermix_config_json(cfg),
                                     vocab.num_text_tokens, model.params_);
        if (h != j.at("hash").get<uint64_t>()) {
            throw CheckpointError("checkpoint hash mismatch: " + path);
        }
        return model;
    } catch (const nlohmann::json::exception &e) {
        throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
    }
}

void CrossAttnConfig::validate() const {
    if (width < 1 || encoder_layers < 1 || decoder_layers < 1 || num_heads < 1 ||
        mlp_hidden < 1 || frame_dim < 1 || max_positions < 1) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (width % num_heads != 0) throw std::invalid_argument("width must divide into heads");
    if (wait_k < 1) throw std::invalid_argument("wait-k must be at least 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
        throw std::invalid_argument("label smoothing outside [0,1)");
    }
}

namespace {

struct DecBlockIdx {
    BlockIdx self;
    int gain_cross;
    std::vector<int> cwq, cwk, cwv;
    int cwo, cwo_b;
};

struct CrossIdx {
    int tok_emb, start_emb, enc_pos, dec_pos, frame_w, frame_b;
    std::vector<BlockIdx> enc;
    std::vector<DecBlockIdx> dec;
    int gain_final, head_w, head_b;
};

CrossIdx cross_layout_params(const CrossAttnConfig &cfg, const Vocabulary &vocab,
                             ParamBuilder &b) {
    CrossIdx idx;
    const double ws = 1.0 / std::sqrt(static_cast<double>(cfg.width));
    idx.tok_emb = b.weight("tok_emb", vocab.num_text_tokens, cfg.width, 0.1);
    idx.start_emb = b.weight("start_emb", 1, cfg.width, 0.1);
    idx.enc_pos = b.weight("enc_pos_emb", cfg.max_positions, cfg.width, 0.02);
    idx.dec_pos = b.weight("dec_pos_emb", cfg.max_positions, cfg.width, 0.02);
    idx.frame_w = b.weight("frame_proj.w", cfg.frame_dim, cfg.width,
                           1.0 / std::sqrt(static_cast<double>(cfg.frame_dim)));
    idx.frame_b = b.bias("frame_proj.b", cfg.width);
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        idx.enc.push_back(
            make_block(b, "enc" + std::to_string(l), cfg.width, cfg.num_heads, cfg.mlp_hidden));
    }
    const int dh = cfg.width / cfg.num_heads;
    (void)dh;
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        DecBlockIdx d;
        std::string prefix = "dec" + std::to_string(l);
        d.self = make_block(b, prefix, cfg.width, cfg.num_heads, cfg.mlp_hidden);
        d.gain_cross = b.gain(prefix + ".cross.gain", cfg.width);
        for (int h = 0; h < cfg.num_heads; ++h) {
            std::string hp = prefix + ".cross.h" + std::to_string(h);
            d.cwq.push_back(b.weight(hp + ".wq", cfg.width, cfg.width / cfg.num_heads, ws));
            d.cwk.push_back(b.weight(hp + ".wk", cfg.width, cfg.width / cfg.num_heads, ws));
            d.cwv.push_back(b.weight(hp + ".wv", cfg.width, cfg.width / cfg.num_heads, ws));
        }
        d.cwo = b.weight(prefix + ".cross.wo", cfg.width, cfg.width, ws);
        d.cwo_b = b.bias(prefix + ".cross.wo_b", cfg.width);
        idx.dec.push_back(std::move(d));
    }
    idx.gain_final = b.gain("final.gain", cfg.width);
    idx.head_w = b.weight("head.w", cfg.width, vocab.num_text_tokens, ws);
    idx.head_b = b.bias("head.b", vocab.num_text_tokens);
    return idx;
}

} // namespace

struct CrossAttnModel::Forward {
    std::unique_ptr<Tape> tape;
    std::vector<Tape::NodeId> pn;
    Tape::NodeId logits = -1;
    std::vector<Tape::NodeId> cross_probs;
    int num_chunk_keys = 0;
};

CrossAttnModel::CrossAttnModel(CrossAttnConfig config, Vocabulary vocab)
    : config_(config), vocab_(vocab) {
    config_.validate();
    if (vocab_.num_text_tokens < 2) throw std::invalid_argument("vocabulary too small");
    ParamBuilder b;
    b.out = &params_;
    b.rng.seed(config_.init_seed);
    cross_layout_params(config_, vocab_, b);
}

CrossAttnModel::Forward CrossAttnModel::build(const std::vector<TokenId> &prefix,
                                              const FrameStream &stream, int heard_chunks,
                                              bool at_stream_end, bool with_loss_targets,
                                              const std::vector<TokenId> *targets) const {
    (void)with_loss_targets;
    (void)targets;
    ParamBuilder counter;
    const CrossIdx idx = cross_layout_params(config_, vocab_, counter);
    const int total_chunks = stream.num_chunks();
    if (heard_chunks < 1 || heard_chunks > total_chunks) {
        throw std::invalid_argument("heard chunk count outside stream");
    }
    const bool with_eoa = at_stream_end && heard_chunks == total_chunks;

    Forward fwd;
    fwd.tape = std::make_unique<Tape>();
    Tape &t = *fwd.tape;
    for (const Param &p : params_) fwd.pn.push_back(t.leaf(p.value));

    // Causal encoder over the heard frames; the end-of-audio marker enters
    // as one extra fixed pseudo-frame.
    const int heard_frames =
        std::min(heard_chunks * stream.frames_per_chunk, static_cast<int>(stream.frames.size()));
    Mat fm = frames_to_mat(stream, config_.frame_dim, heard_frames);
    if (with_eoa) {
        Mat with_marker(fm.rows + 1, fm.cols);
        std::copy(fm.v.begin(), fm.v.end(), with_marker.v.begin());
        // Deterministic non-zero marker row, regenerated from the init seed.
        std::mt19937_64 rng(config_.init_seed ^ 0xe0a0e0a0ULL);
        for (int c = 0; c < fm.cols; ++c) with_marker.at(fm.rows, c) = next_gaussian(rng);
        fm = std::move(with_marker);
    }
    const int n_enc = fm.rows;
    if (n_enc > config_.max_positions) {
        throw std::invalid_argument("input longer than the position table");
    }
    Tape::NodeId enc = t.add(
        t.add_row_broadcast(t.matmul(t.leaf(std::move(fm)), fwd.pn[idx.frame_w]),
                            fwd.pn[idx.frame_b]),
        t.gather_rows(fwd.pn[idx.enc_pos], iota_indices(n_enc)));
    const Mat enc_mask = causal_mask(n_enc);
    for (const BlockIdx &blk : idx.enc) {
        enc = apply_block(t, enc, blk, fwd.pn, enc_mask, config_.num_heads, config_.width);
    }

    // One key per heard chunk (its final frame's state), plus the marker.
    std::vector<int> key_rows;
    for (int c = 1; c <= heard_chunks; ++c) {
        key_rows.push_back(std::min(c * stream.frames_per_chunk, heard_frames) - 1);
    }
    fwd.num_chunk_keys = heard_chunks;
    if (with_eoa) key_rows.push_back(n_enc - 1);
    Tape::NodeId keys = t.gather_rows(enc, key_rows);
    const int n_keys = static_cast<int>(key_rows.size());

    // Decoder rows: start symbol, then the prefix tokens.
    const int n_dec = 1 + static_cast<int>(prefix.size());
    if (n_dec > config_.max_positions) {
        throw std::invalid_argument("prefix longer than the position table");
    }
    std::vector<std::pair<Tape::NodeId, int>> sources;
    sources.emplace_back(fwd.pn[idx.start_emb], 0);
    if (!prefix.empty()) {
        std::vector<int> ids;
        for (TokenId id : prefix) {
            if (!vocab_.is_text(id)) throw std::out_of_range("token id outside vocabulary");
            ids.push_back(id);
        }
        Tape::NodeId toks = t.gather_rows(fwd.pn[idx.tok_emb], ids);
        for (int i = 0; i < static_cast<int>(prefix.size()); ++i) sources.emplace_back(toks, i);
    }
    Tape::NodeId x = t.add(t.assemble_rows(std::move(sources)),
                           t.gather_rows(fwd.pn[idx.dec_pos], iota_indices(n_dec)));

    // Decoder position u has emitted u tokens; with wait-k masking it may
    // attend chunks up to min(heard, k + u), and sees the end-of-audio
    // marker only once that cap reaches the whole stream.
    Mat cross_mask(n_dec, n_keys);
    for (int u = 0; u < n_dec; ++u) {
        int cap = heard_chunks;
        if (config_.key_mask == KeyMaskPolicy::WaitK) {
            cap = std::min(heard_chunks, config_.wait_k + u);
        }
        for (int c = cap; c < heard_chunks; ++c) cross_mask.at(u, c) = kMaskedOut;
        if (with_eoa && cap < heard_chunks) cross_mask.at(u, n_keys - 1) = kMaskedOut;
    }

    const Mat dec_mask = causal_mask(n_dec);
    const int dh = config_.width / config_.num_heads;
    for (const DecBlockIdx &blk : idx.dec) {
        x = self_attention(t, x, blk.self, fwd.pn, dec_mask, config_.num_heads, config_.width);
        Tape::NodeId nc = t.rmsnorm(x, fwd.pn[blk.gain_cross]);
        std::vector<Tape::NodeId> headed;
        for (int h = 0; h < config_.num_heads; ++h) {
            Tape::NodeId q = t.matmul(nc, fwd.pn[blk.cwq[h]]);
            Tape::NodeId k = t.matmul(keys, fwd.pn[blk.cwk[h]]);
            Tape::NodeId v = t.matmul(keys, fwd.pn[blk.cwv[h]]);
            Tape::NodeId s =
                t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
            Tape::NodeId p = t.masked_softmax_rows(s, cross_mask);
            fwd.cross_probs.push_back(p);
            headed.push_back(t.matmul(p, v));
        }
        Tape::NodeId o = t.add_row_broadcast(t.matmul(t.concat_cols(headed), fwd.pn[blk.cwo]),
                                             fwd.pn[blk.cwo_b]);
        x = t.add(x, o);
        x = mlp_stage(t, x, blk.self, fwd.pn);
    }

    Tape::NodeId nf = t.rmsnorm(x, fwd.pn[idx.gain_final]);
    fwd.logits = t.add_row_broadcast(t.matmul(nf, fwd.pn[idx.head_w]), fwd.pn[idx.head_b]);
    return fwd;
}

std::vector<double> CrossAttnModel::next_token_logits(const std::vector<TokenId> &emitted,
                                                      const FrameStream &stream,
                                                      int heard_chunks,
                                                      bool at_stream_end) const {
    Forward f = build(emitted, stream, heard_chunks, at_stream_end, false, nullptr);
    const Mat &logits = f.tape->value(f.logits);
    const int row = logits.rows - 1;
    return std::vector<double>(logits.row(row), logits.row(row) + logits.cols);
}

int CrossAttnModel::cross_attention_peak(const std::vector<TokenId> &emitted,
                                         const FrameStream &stream, int decoder_pos,
                                         int heard_chunks) const {
    Forward f = build(emitted, stream, heard_chunks, false, false, nullptr);
    if (decoder_pos < 0 || decoder_pos > static_cast<int>(emitted.size())) {
        throw std::out_of_range("decoder position outside the prefix");
    }
    std::vector<std::vector<double>> rows;
    for (Tape::NodeId p : f.cross_probs) {
        const Mat &probs = f.tape->value(p);
        rows.emplace_back(probs.row(decoder_pos), probs.row(decoder_pos) + f.num_chunk_keys);
    }
    return peak_attention_index(rows);
}

double CrossAttnModel::sequence_loss(const std::vector<TokenId> &target,
                                     const FrameStream &stream) const {
    if (target.empty() || target.back() != vocab_.eos_id) {
        throw std::invalid_argument("target must end with <EOS>");
    }
    std::vector<TokenId> prefix(target.begin(), target.end() - 1);
    Forward f = build(prefix, stream, stream.num_chunks(), true, true, &target);
    std::vector<std::pair<int, int>> targets;
    for (size_t u = 0; u < target.size(); ++u) targets.emplace_back(static_cast<int>(u), target[u]);
    Tape::NodeId ce = f.tape->cross_entropy(f.logits, targets, config_.label_smoothing);
    return f.tape->value(ce).at(0, 0);
}

double CrossAttnModel::loss_and_gradient(const std::vector<TokenId> &target,
                                         const FrameStream &stream,
                                         std::vector<Mat> &grads) const {
    if (target.empty() || target.back() != vocab_.eos_id) {
        throw std::invalid_argument("target must end with <EOS>");
    }
    std::vector<TokenId> prefix(target.begin(), target.end() - 1);
    Forward f = build(prefix, stream, stream.num_chunks(), true, true, &target);
    std::vector<std::pair<int, int>> targets;
    for (size_t u = 0; u < target.size(); ++u) targets.emplace_back(static_cast<int>(u), target[u]);
    Tape &t = *f.tape;
    Tape::NodeId ce = t.cross_entropy(f.logits, targets, config_.label_smoothing);
    t.backward(ce);
    if (grads.size() != params_.size()) {
        grads.clear();
        for (const Param &p : params_) grads.emplace_back(p.value.rows, p.value.cols);
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        const Mat &g = t.gradient(f.pn[i]);
        for (size_t k = 0; k < g.v.size(); ++k) grads[i].v[k] += g.v[k];
    }
    return t.value(ce).at(0, 0);
}

std::vector<double> CrossAttnModel::step_logits(const DecodeContext &ctx) {
    return next_token_logits(*ctx.emitted, *ctx.stream, ctx.heard_chunks, ctx.at_stream_end);
}

int CrossAttnModel::attention_peak(const DecodeContext &ctx) {
    return cross_attention_peak(*ctx.emitted, *ctx.stream, static_cast<int>(ctx.emitted->size()),
                                ctx.heard_chunks);
}

namespace {

nlohmann::json cross_config_json(const CrossAttnConfig &c) {
    return {{"width", c.width},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"num_heads", c.num_heads},
            {"mlp_hidden", c.mlp_hidden},
            {"frame_dim", c.frame_dim},
            {"max_positions", c.max_positions},
            {"key_mask", c.key_mask == KeyMaskPolicy::WaitK ? "wait_k" : "offline"},
            {"wait_k", c.wait_k},
            {"label_smoothing", c.label_smoothing},
            {"init_seed", c.init_seed}};
}

CrossAttnConfig cross_config_from_json(const nlohmann::json &j) {
    CrossAttnConfig c;
    c.width = j.at("width").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.frame_dim = j.at("frame_dim").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    std::string mask = j.at("key_mask").get<std::string>();
    if (mask == "wait_k") {
        c.key_mask = KeyMaskPolicy::WaitK;
    } else if (mask == "offline") {
        c.key_mask = KeyMaskPolicy::Offline;
    } else {
        throw CheckpointError("unknown key mask: " + mask);
    }
    c.wait_k = j.at("wait_k").get<int>();
    c.label_smoothing = j.at("label_smoothing").get<double>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
}

} // namespace

void CrossAttnModel::save(const std::string &path) const {
    nlohmann::json j;
    j["kind"] = "cross_attention";
    j["config"] = cross_config_json(config_);
    j["num_text_tokens"] = vocab_.num_text_tokens;
    j["params"] = params_to_json(params_);
    j["hash"] = checkpoint_hash("cross_attention", j["config"], vocab_.num_text_tokens, params_);
    write_atomically(path, j.dump());
}

CrossAttnModel CrossAttnModel::load(const std::string &path) {
    nlohmann::json j = read_checkpoint_json(path);
    try {
        if (j.at("kind").get<std::string>() != "cross_attention") {
            throw CheckpointError("checkpoint holds a different model kind");
        }
        CrossAttnConfig cfg = cross_config_from_json(j.at("config"));
        Vocabulary vocab = Vocabulary::make(j.at("num_text_tokens").get<int>());
        CrossAttnModel model(cfg, vocab);
        params_from_json(j.at("params"), model.params_);
        uint64_t h = checkpoint_hash("cross_attention", cross_config_json(cfg),
                                     vocab.num_text_tokens, model.params_);
        if (h != j.at("hash").get<uint64_t>()) {
            throw CheckpointError("checkpoint hash mismatch: " + path);
        }
        return model;
    } catch (const nlohmann::json::exception &e) {
        throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
    }
}

int peak_attention_index(const std::vector<std::vector<double>> &rows) {
    if (rows.empty() || rows.front().empty()) throw std::invalid_argument("no attention rows");
    const size_t n = rows.front().size();
    std::vector<double> mean(n, 0.0);
    for (const std::vector<double> &r : rows) {
        if (r.size() != n) throw std::invalid_argument("attention rows differ in length");
        for (size_t i = 0; i < n; ++i) mean[i] += r[i];
    }
    return argmax_lowest(mean) + 1;
}

ScriptedOracle::ScriptedOracle(const Supervision &gold, Vocabulary vocab, double peak_logit)
    : vocab_(vocab), peak_logit_(peak_logit) {
    words_ = words_of(gold.steps, vocab_);
    emit_chunk_ = gold.word_emit_chunk;
    if (words_.size() != emit_chunk_.size()) {
        throw std::invalid_argument("gold supervision is inconsistent");
    }
}

std::vector<double> ScriptedOracle::step_logits(const DecodeContext &ctx) {
    std::vector<double> logits(static_cast<size_t>(vocab_.size()), 0.0);
    const size_t u = ctx.emitted->size();
    if (u >= words_.size()) {
        logits[vocab_.eos_id] = peak_logit_;
        return logits;
    }
    if (ctx.heard_chunks >= emit_chunk_[u]) {
        logits[words_[u]] = peak_logit_;
    } else {
        logits[vocab_.wait_id] = peak_logit_;
    }
    return logits;
}

std::pair<double, double> ScriptedOracle::early_exit_wait_emit(const DecodeContext &ctx) {
    if (!early_exit_enabled_) throw std::logic_error("early exit not enabled");
    if (forced_wait_chunk_ && ctx.heard_chunks == *forced_wait_chunk_) {
        return {early_exit_margin_, 0.0};
    }
    const size_t u = ctx.emitted->size();
    const bool ready = u >= words_.size() || ctx.heard_chunks >= emit_chunk_[u];
    return ready ? std::make_pair(0.0, early_exit_margin_)
                 : std::make_pair(early_exit_margin_, 0.0);
}

} // namespace intermix
