#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "intermix/align.hpp"
#include "intermix/core.hpp"
#include "intermix/tensor.hpp"

namespace intermix {

struct Param {
    std::string name;
    Mat value;
};

// Raised when a checkpoint is unreadable or does not match the model it is
// loaded into.
class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Cross entropy of one step over the augmented vocabulary, and its exact
// split into a wait/emit decision term plus a text term (zero for waits):
// p(step) = p(decision) * p(token | emit).
struct StepLossSplit {
    double decision = 0.0;
    double token = 0.0;
};

double step_cross_entropy(const std::vector<double> &logits, TokenId target,
                          const Vocabulary &vocab);
StepLossSplit step_cross_entropy_split(const std::vector<double> &logits, TokenId target,
                                       const Vocabulary &vocab);

// What a streaming decoder needs from a step model. Implementations decide
// whether to condition on the mixed layout (intermixed model), the emitted
// token prefix (cross-attention model), or a script (oracle).
struct DecodeContext {
    const FrameStream *stream = nullptr;
    const std::vector<LayoutSlot> *layout = nullptr;
    const std::vector<TokenId> *emitted = nullptr;
    int heard_chunks = 0;
    bool at_stream_end = false; // final chunk arrived; end-of-audio visible
};

class StepModel {
  public:
    virtual ~StepModel() = default;
    virtual std::vector<double> step_logits(const DecodeContext &ctx) = 0;
    virtual const Vocabulary &vocabulary() const = 0;
    virtual bool has_early_exit() const { return false; }
    // (wait, emit) logits.
    virtual std::pair<double, double> early_exit_wait_emit(const DecodeContext &);
    virtual bool has_attention_peak() const { return false; }
    virtual int attention_peak(const DecodeContext &);
};

struct ModelConfig {
    int width = 64;
    int num_layers = 4;
    int num_heads = 4;
    int mlp_hidden = 128;
    int frame_dim = 16;
    int max_positions = 512;
    int early_exit_layer = 2; // 0 disables the head
    double label_smoothing = 0.0;
    uint64_t init_seed = 1;

    void validate() const;
};

// Decoder-only step model over mixed speech/text slots, with an optional
// two-way early-exit head on an intermediate layer.
class IntermixedModel : public StepModel {
  public:
    IntermixedModel(ModelConfig config, Vocabulary vocab);

    // Logits over the augmented vocabulary for the step conditioned by the
    // final layout slot. Within a chunk slot only the chunk-final position
    // (or the end-of-audio position, at stream end) is exposed.
    std::vector<double> forward_step(const std::vector<LayoutSlot> &layout_prefix,
                                     const FrameStream &stream, bool at_stream_end) const;

    // (wait, emit) logits from the designated early layer; later layers are
    // not evaluated.
    std::pair<double, double> early_exit_head(const std::vector<LayoutSlot> &layout_prefix,
                                              const FrameStream &stream, bool at_stream_end) const;

    double step_sequence_loss(const Supervision &sup, const FrameStream &stream) const;
    double multitask_loss(const Supervision &sup, const FrameStream &stream,
                          double policy_weight) const;

    // Loss with gradients accumulated into `grads` (aligned with params()).
    double loss_and_gradient(const Supervision &sup, const FrameStream &stream,
                             double policy_weight, std::vector<Mat> &grads) const;

    std::vector<Param> &params() { return params_; }
    const std::vector<Param> &params() const { return params_; }
    const ModelConfig &config() const { return config_; }
    bool has_early_exit() const override { return config_.early_exit_layer > 0; }

    // StepModel interface.
    std::vector<double> step_logits(const DecodeContext &ctx) override;
    std::pair<double, double> early_exit_wait_emit(const DecodeContext &ctx) override;
    const Vocabulary &vocabulary() const override { return vocab_; }

    void save(const std::string &path) const;
    static IntermixedModel load(const std::string &path);

  private:
    struct Forward;
    Forward build(const std::vector<LayoutSlot> &layout, const FrameStream &stream,
                  bool at_stream_end, int up_to_layer, bool main_head, bool exit_head) const;

    ModelConfig config_;
    Vocabulary vocab_;
    std::vector<Param> params_;
};

enum class KeyMaskPolicy : uint8_t { Offline, WaitK };

struct CrossAttnConfig {
    int width = 64;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int num_heads = 4;
    int mlp_hidden = 128;
    int frame_dim = 16;
    int max_positions = 512;
    KeyMaskPolicy key_mask = KeyMaskPolicy::Offline;
    int wait_k = 1; // used when key_mask == WaitK
    double label_smoothing = 0.0;
    uint64_t init_seed = 1;

    void validate() const;
};

// Encoder-decoder baseline: causal encoder over frames, decoder with
// causal self-attention over text and cross-attention over per-chunk
// encoder states. Cross-attention scores are recorded for AlignAtt.
class CrossAttnModel : public StepModel {
  public:
    CrossAttnModel(CrossAttnConfig config, Vocabulary vocab);

    // Next-token logits over the text vocabulary given the emitted prefix
    // and the heard chunks.
    std::vector<double> next_token_logits(const std::vector<TokenId> &emitted,
                                          const FrameStream &stream, int heard_chunks,
                                          bool at_stream_end) const;

    // Layer/head-averaged peak attention chunk (1-based) for the given
    // decoder position, restricted to heard chunks.
    int cross_attention_peak(const std::vector<TokenId> &emitted, const FrameStream &stream,
                             int decoder_pos, int heard_chunks) const;

    double sequence_loss(const std::vector<TokenId> &target, const FrameStream &stream) const;
    double loss_and_gradient(const std::vector<TokenId> &target, const FrameStream &stream,
                             std::vector<Mat> &grads) const;

    std::vector<Param> &params() { return params_; }
    const std::vector<Param> &params() const { return params_; }
    const CrossAttnConfig &config() const { return config_; }

    // StepModel interface.
    std::vector<double> step_logits(const DecodeContext &ctx) override;
    bool has_attention_peak() const override { return true; }
    int attention_peak(const DecodeContext &ctx) override;
    const Vocabulary &vocabulary() const override { return vocab_; }

    void save(const std::string &path) const;
    static CrossAttnModel load(const std::string &path);

  private:
    struct Forward;
    Forward build(const std::vector<TokenId> &prefix, const FrameStream &stream, int heard_chunks,
                  bool at_stream_end, bool with_loss_targets,
                  const std::vector<TokenId> *targets) const;

    CrossAttnConfig config_;
    Vocabulary vocab_;
    std::vector<Param> params_;
};

// Averages per-layer/head attention rows and returns the 1-based argmax,
// ties to the lowest index.
int peak_attention_index(const std::vector<std::vector<double>> &rows);

// Test double with a point-mass step distribution on a gold step sequence.
// Extra forced waits never change the pending text token.
class ScriptedOracle : public StepModel {
  public:
    ScriptedOracle(const Supervision &gold, Vocabulary vocab, double peak_logit = 25.0);

    void enable_early_exit(double margin = 1.0) {
        early_exit_enabled_ = true;
        early_exit_margin_ = margin;
    }
    // Makes the early-exit head answer wait whenever this chunk is current.
    void force_wait_at_chunk(int chunk) { forced_wait_chunk_ = chunk; }

    std::vector<double> step_logits(const DecodeContext &ctx) override;
    bool has_early_exit() const override { return early_exit_enabled_; }
    std::pair<double, double> early_exit_wait_emit(const DecodeContext &ctx) override;
    const Vocabulary &vocabulary() const override { return vocab_; }

  private:
    std::vector<TokenId> words_;
    std::vector<int> emit_chunk_;
    Vocabulary vocab_;
    double peak_logit_;
    bool early_exit_enabled_ = false;
    double early_exit_margin_ = 1.0;
    std::optional<int> forced_wait_chunk_;
};

} // namespace intermix
