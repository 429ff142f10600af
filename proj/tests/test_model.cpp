#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "intermix/model.hpp"
#include "intermix/run.hpp"
#include "intermix/synth.hpp"

using namespace intermix;

namespace {

ModelConfig tiny_config() {
    ModelConfig mc;
    mc.width = 8;
    mc.num_layers = 2;
    mc.num_heads = 2;
    mc.mlp_hidden = 16;
    mc.frame_dim = 4;
    mc.max_positions = 64;
    mc.early_exit_layer = 1;
    mc.init_seed = 11;
    return mc;
}

// A small handmade utterance: 2 chunks of 4 frames, two words plus <EOS>.
struct TinyTask {
    Vocabulary vocab = Vocabulary::make(6);
    FrameStream stream;
    Supervision sup;

    TinyTask() {
        stream.frames_per_chunk = 4;
        stream.chunk_ms = 640;
        std::mt19937_64 rng(3);
        for (int f = 0; f < 8; ++f) {
            std::vector<double> frame(4);
            for (double &x : frame) x = ((rng() >> 11) * 0x1p-53) - 0.5;
            stream.frames.push_back(std::move(frame));
        }
        sup = compile_step_sequence({0, 1, 1}, {3, 8}, stream, {2, 4, vocab.eos_id}, vocab);
    }
};

} // namespace

TEST_CASE("step loss decomposes into decision and token terms") {
    Vocabulary vocab = Vocabulary::make(10);
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> logits(static_cast<size_t>(vocab.size()));
        for (double &l : logits) l = 6.0 * (((rng() >> 11) * 0x1p-53) - 0.5);
        TokenId target = static_cast<TokenId>(rng() % vocab.size());
        double full = step_cross_entropy(logits, target, vocab);
        StepLossSplit split = step_cross_entropy_split(logits, target, vocab);
        CHECK(std::fabs(full - (split.decision + split.token)) < 1e-9);
        if (vocab.is_wait(target)) CHECK(split.token == 0.0);
    }
}

TEST_CASE("model initialization is deterministic and seed-sensitive") {
    TinyTask task;
    IntermixedModel a(tiny_config(), task.vocab);
    IntermixedModel b(tiny_config(), task.vocab);
    REQUIRE(a.params().size() == b.params().size());
    for (size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].value.v == b.params()[i].value.v);
        CHECK(a.params()[i].name == b.params()[i].name);
    }
    ModelConfig other = tiny_config();
    other.init_seed = 12;
    IntermixedModel c(other, task.vocab);
    bool differs = false;
    for (size_t i = 0; i < a.params().size(); ++i) {
        differs |= a.params()[i].value.v != c.params()[i].value.v;
    }
    CHECK(differs);
    CHECK(a.forward_step(task.sup.input_layout, task.stream, true) ==
          b.forward_step(task.sup.input_layout, task.stream, true));
}

TEST_CASE("step logits cover the augmented vocabulary") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    auto logits = model.forward_step({LayoutSlot::chunk(1)}, task.stream, false);
    CHECK(logits.size() == static_cast<size_t>(task.vocab.size()));
    for (double l : logits) CHECK(std::isfinite(l));
}

TEST_CASE("analytic gradients match finite differences everywhere") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    std::vector<Mat> grads;
    (void)model.loss_and_gradient(task.sup, task.stream, 0.7, grads);
    REQUIRE(grads.size() == model.params().size());

    const double h = 1e-5;
    std::mt19937_64 rng(9);
    for (size_t pi = 0; pi < model.params().size(); ++pi) {
        Param &p = model.params()[pi];
        // A few entries per parameter; every group gets probed.
        for (int probe = 0; probe < 3; ++probe) {
            size_t k = rng() % p.value.v.size();
            double saved = p.value.v[k];
            p.value.v[k] = saved + h;
            double up = model.multitask_loss(task.sup, task.stream, 0.7);
            p.value.v[k] = saved - h;
            double down = model.multitask_loss(task.sup, task.stream, 0.7);
            p.value.v[k] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = grads[pi].v[k];
            double rel = std::fabs(numeric - analytic) /
                         std::max({1e-8, std::fabs(numeric), std::fabs(analytic)});
            INFO(p.name << "[" << k << "]");
            CHECK(rel < 1e-4);
        }
    }
}

TEST_CASE("multitask loss reduces to the step loss when the head is off") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    CHECK(model.multitask_loss(task.sup, task.stream, 0.0) ==
          doctest::Approx(model.step_sequence_loss(task.sup, task.stream)));
    CHECK(model.multitask_loss(task.sup, task.stream, 1.0) >
          model.step_sequence_loss(task.sup, task.stream));
}

TEST_CASE("the early-exit head ignores layers above it") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    auto before = model.early_exit_head(task.sup.input_layout, task.stream, true);
    // Perturb everything in the blocks above the exit layer and the final
    // head; the early decision must not move.
    for (Param &p : model.params()) {
        if (p.name.rfind("block1", 0) == 0 || p.name.rfind("final", 0) == 0 ||
            p.name.rfind("head", 0) == 0) {
            for (double &x : p.value.v) x += 0.37;
        }
    }
    auto after = model.early_exit_head(task.sup.input_layout, task.stream, true);
    CHECK(before.first == doctest::Approx(after.first));
    CHECK(before.second == doctest::Approx(after.second));
    // ...while the full forward pass does move.
    ModelConfig no_head = tiny_config();
    no_head.early_exit_layer = 0;
    IntermixedModel bare(no_head, task.vocab);
    CHECK_FALSE(bare.has_early_exit());
    CHECK_THROWS_AS((void)bare.early_exit_head(task.sup.input_layout, task.stream, true),
                    std::logic_error);
}

TEST_CASE("causality: later chunks cannot leak into earlier steps") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    std::vector<LayoutSlot> prefix{LayoutSlot::chunk(1)};
    auto before = model.forward_step(prefix, task.stream, false);
    FrameStream altered = task.stream;
    for (int f = 4; f < 8; ++f) {
        for (double &x : altered.frames[f]) x += 5.0;
    }
    auto after = model.forward_step(prefix, altered, false);
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == doctest::Approx(after[i]));
    // Hearing the altered chunk does change the distribution.
    std::vector<LayoutSlot> two{LayoutSlot::chunk(1), LayoutSlot::chunk(2)};
    auto b2 = model.forward_step(two, task.stream, true);
    auto a2 = model.forward_step(two, altered, true);
    bool moved = false;
    for (size_t i = 0; i < b2.size(); ++i) moved |= std::fabs(b2[i] - a2[i]) > 1e-9;
    CHECK(moved);
}

TEST_CASE("the end-of-audio marker changes the final-chunk step") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    std::vector<LayoutSlot> full{LayoutSlot::chunk(1), LayoutSlot::chunk(2)};
    auto without = model.forward_step(full, task.stream, false);
    auto with = model.forward_step(full, task.stream, true);
    bool moved = false;
    for (size_t i = 0; i < with.size(); ++i) moved |= std::fabs(with[i] - without[i]) > 1e-9;
    CHECK(moved);
}

TEST_CASE("inputs past the position table are rejected") {
    ModelConfig mc = tiny_config();
    mc.max_positions = 6;
    TinyTask task;
    IntermixedModel model(mc, task.vocab);
    CHECK_THROWS_AS(
        (void)model.forward_step({LayoutSlot::chunk(1), LayoutSlot::chunk(2)}, task.stream, false),
        std::invalid_argument);
    CHECK_THROWS_AS((void)model.forward_step({LayoutSlot::chunk(7)}, task.stream, false),
                    std::out_of_range);
}

TEST_CASE("checkpoints round-trip and refuse corruption") {
    TinyTask task;
    IntermixedModel model(tiny_config(), task.vocab);
    const std::string path = "model_io_test.json";
    model.save(path);
    IntermixedModel back = IntermixedModel::load(path);
    CHECK(back.forward_step(task.sup.input_layout, task.stream, true) ==
          model.forward_step(task.sup.input_layout, task.stream, true));

    // Tamper with a stored value: the hash no longer matches.
    std::ifstream in(path);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    size_t pos = body.find("\"data\":[");
    REQUIRE(pos != std::string::npos);
    body.replace(pos + 8, 1, body[pos + 8] == '1' ? "2" : "1");
    std::ofstream out(path);
    out << body;
    out.close();
    CHECK_THROWS_AS((void)IntermixedModel::load(path), CheckpointError);
    std::ofstream(path) << "not json";
    CHECK_THROWS_AS((void)IntermixedModel::load(path), CheckpointError);
    CHECK_THROWS_AS((void)IntermixedModel::load("no_such_file.json"), CheckpointError);
    std::remove(path.c_str());
}

TEST_CASE("config validation") {
    Vocabulary vocab = Vocabulary::make(6);
    ModelConfig mc = tiny_config();
    mc.num_heads = 3; // does not divide width 8
    CHECK_THROWS_AS(IntermixedModel(mc, vocab), std::invalid_argument);
    mc = tiny_config();
    mc.early_exit_layer = 5;
    CHECK_THROWS_AS(IntermixedModel(mc, vocab), std::invalid_argument);
    mc = tiny_config();
    mc.label_smoothing = 1.0;
    CHECK_THROWS_AS(IntermixedModel(mc, vocab), std::invalid_argument);
}

TEST_CASE("scripted oracle follows its gold script") {
    TinyTask task;
    ScriptedOracle oracle(task.sup, task.vocab);
    std::vector<TokenId> none;
    std::vector<LayoutSlot> layout{LayoutSlot::chunk(1)};
    DecodeContext ctx{&task.stream, &layout, &none, 1, false};
    auto logits = oracle.step_logits(ctx);
    // First word is audible in chunk 1 (end frame 3): point mass on it.
    CHECK(argmax_lowest(logits) == 2);
    CHECK_THROWS_AS((void)oracle.early_exit_wait_emit(ctx), std::logic_error);
    oracle.enable_early_exit();
    auto [w, e] = oracle.early_exit_wait_emit(ctx);
    CHECK(e > w);
    // Second word needs chunk 2.
    std::vector<TokenId> one{2};
    DecodeContext ctx2{&task.stream, &layout, &one, 1, false};
    CHECK(argmax_lowest(oracle.step_logits(ctx2)) == task.vocab.wait_id);
    auto [w2, e2] = oracle.early_exit_wait_emit(ctx2);
    CHECK(w2 > e2);
}

TEST_CASE("cross-attention model: logits, masking, and the attention peak") {
    Vocabulary vocab = Vocabulary::make(6);
    CrossAttnConfig cc;
    cc.width = 8;
    cc.encoder_layers = 1;
    cc.decoder_layers = 1;
    cc.num_heads = 2;
    cc.mlp_hidden = 16;
    cc.frame_dim = 4;
    cc.max_positions = 64;
    cc.init_seed = 4;
    CrossAttnModel model(cc, vocab);

    FrameStream stream;
    stream.frames_per_chunk = 4;
    stream.chunk_ms = 640;
    std::mt19937_64 rng(8);
    for (int f = 0; f < 16; ++f) {
        std::vector<double> frame(4);
        for (double &x : frame) x = ((rng() >> 11) * 0x1p-53) - 0.5;
        stream.frames.push_back(std::move(frame));
    }

    auto logits = model.next_token_logits({2, 3}, stream, 2, false);
    CHECK(logits.size() == static_cast<size_t>(vocab.num_text_tokens));

    // Causality through the heard horizon: frames beyond it cannot matter.
    FrameStream altered = stream;
    for (int f = 8; f < 16; ++f) {
        for (double &x : altered.frames[f]) x += 3.0;
    }
    auto logits2 = model.next_token_logits({2, 3}, altered, 2, false);
    for (size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == doctest::Approx(logits2[i]));

    int peak = model.cross_attention_peak({2, 3}, stream, 2, 3);
    CHECK(peak >= 1);
    CHECK(peak <= 3);

    // Checkpoint round trip for this model kind too.
    const std::string path = "cross_io_test.json";
    model.save(path);
    CrossAttnModel back = CrossAttnModel::load(path);
    auto logits3 = back.next_token_logits({2, 3}, stream, 2, false);
    for (size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == doctest::Approx(logits3[i]));
    std::remove(path.c_str());
}

TEST_CASE("attention peak averaging breaks ties low") {
    std::vector<std::vector<double>> rows(3, std::vector<double>(20, 0.01));
    for (auto &r : rows) r[14] = 0.5;
    CHECK(peak_attention_index(rows) == 15);
    rows[0][3] = 0.5;
    rows[1][3] = 0.5;
    rows[2][3] = 0.5; // equal mass at 4 and 15: lowest wins
    CHECK(peak_attention_index(rows) == 4);
    CHECK_THROWS_AS((void)peak_attention_index({}), std::invalid_argument);
}

TEST_CASE("cross-attention gradients match finite differences") {
    Vocabulary vocab = Vocabulary::make(5);
    CrossAttnConfig cc;
    cc.width = 8;
    cc.encoder_layers = 1;
    cc.decoder_layers = 1;
    cc.num_heads = 2;
    cc.mlp_hidden = 12;
    cc.frame_dim = 3;
    cc.max_positions = 32;
    cc.key_mask = KeyMaskPolicy::WaitK;
    cc.wait_k = 1;
    cc.init_seed = 6;
    CrossAttnModel model(cc, vocab);

    FrameStream stream;
    stream.frames_per_chunk = 3;
    stream.chunk_ms = 640;
    std::mt19937_64 rng(10);
    for (int f = 0; f < 9; ++f) {
        std::vector<double> frame(3);
        for (double &x : frame) x = ((rng() >> 11) * 0x1p-53) - 0.5;
        stream.frames.push_back(std::move(frame));
    }
    std::vector<TokenId> target{1, 3, vocab.eos_id};

    std::vector<Mat> grads;
    (void)model.loss_and_gradient(target, stream, grads);
    const double h = 1e-5;
    for (size_t pi = 0; pi < model.params().size(); ++pi) {
        Param &p = model.params()[pi];
        for (int probe = 0; probe < 2; ++probe) {
            size_t k = rng() % p.value.v.size();
            double saved = p.value.v[k];
            p.value.v[k] = saved + h;
            double up = model.sequence_loss(target, stream);
            p.value.v[k] = saved - h;
            double down = model.sequence_loss(target, stream);
            p.value.v[k] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = grads[pi].v[k];
            double rel = std::fabs(numeric - analytic) /
                         std::max({1e-8, std::fabs(numeric), std::fabs(analytic)});
            INFO(p.name << "[" << k << "]");
            CHECK(rel < 1e-4);
        }
    }
}
