// Command-line front end: corpus generation, training, decoding and
// evaluation sweeps over the streaming policies.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "intermix/decode.hpp"
#include "intermix/run.hpp"

using namespace intermix;

namespace {

constexpr int kExitBadArgs = 2;
constexpr int kExitBadInput = 3;
constexpr int kExitRuntime = 4;

// Inputs that cannot be opened or parsed exit with kExitBadInput.
struct BadInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_readable(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw BadInput("cannot open input file: " + path);
}

std::string config_sidecar(const std::string &corpus_path) { return corpus_path + ".config.json"; }

std::vector<SynthExample> load_corpus(const std::string &path, SynthConfig &config_out) {
    require_readable(path);
    require_readable(config_sidecar(path));
    try {
        config_out = load_config_json(config_sidecar(path));
        return load_corpus_jsonl(path, config_out);
    } catch (const std::exception &e) {
        throw BadInput("unreadable corpus " + path + ": " + e.what());
    }
}

struct GenArgs {
    SynthConfig config;
    int n = 1000;
    std::string reorder = "monotonic";
    std::string out;
};

int run_gen(const GenArgs &a) {
    SynthConfig config = a.config;
    config.reorder_mode = reorder_mode_from_name(a.reorder);
    auto corpus = generate_corpus(config, a.n);
    save_corpus_jsonl(corpus, config, a.out);
    save_config_json(config, config_sidecar(a.out));
    std::cout << "wrote " << corpus.size() << " utterances to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string corpus;
    std::string out;
    std::string arch = "intermixed";
    ModelConfig model;
    CrossAttnConfig cross;
    TrainConfig train;
    double corrupt_fraction = 0.0;
    uint64_t corrupt_seed = 1;
    int delay_chunks = 0;
    uint64_t delay_seed = 77;
    int wait_k = 1;
    double smoothing = 0.0;
};

int run_train(const TrainArgs &a) {
    SynthConfig sc;
    auto corpus = load_corpus(a.corpus, sc);
    Vocabulary vocab = sc.vocabulary();
    auto examples = a.corrupt_fraction > 0.0
                        ? compile_corpus_corrupt(corpus, vocab, a.corrupt_fraction, a.corrupt_seed)
                    : a.delay_chunks > 0
                        ? compile_corpus_delayed(corpus, vocab, a.delay_chunks, a.delay_seed)
                        : compile_corpus(corpus, vocab);

    if (a.arch == "intermixed") {
        ModelConfig mc = a.model;
        mc.frame_dim = sc.frame_dim;
        mc.label_smoothing = a.smoothing;
        IntermixedModel model(mc, vocab);
        train(model, examples, a.train);
        model.save(a.out);
    } else if (a.arch == "crossattn") {
        CrossAttnConfig cc = a.cross;
        cc.frame_dim = sc.frame_dim;
        cc.label_smoothing = a.smoothing;
        cc.key_mask = KeyMaskPolicy::WaitK;
        cc.wait_k = a.wait_k;
        CrossAttnModel model(cc, vocab);
        train(model, examples, a.train);
        model.save(a.out);
    } else {
        throw CLI::ValidationError("--arch must be intermixed or crossattn");
    }
    std::cout << "trained " << a.arch << " model on " << examples.size() << " utterances -> "
              << a.out << "\n";
    return 0;
}

struct RunArgs {
    std::string model_path;
    std::string corpus;
    std::string policy = "intermixed";
    double kappa = 0.0;
    double nu = 0.0;
    int wait_k = 1;
    int window = 8;
    int silence_chunks = 0;
    std::string logs_out;
    std::string csv_label = "held_out";
    std::vector<double> sweep_kappa;
    bool sweep_mode = false;
};

std::unique_ptr<StepModel> load_model(const std::string &path) {
    require_readable(path);
    std::ifstream in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception &e) {
        throw BadInput("unreadable model " + path + ": " + e.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "intermixed") return std::make_unique<IntermixedModel>(IntermixedModel::load(path));
    if (kind == "cross_attention") {
        return std::make_unique<CrossAttnModel>(CrossAttnModel::load(path));
    }
    throw BadInput("model file " + path + " holds unknown kind '" + kind + "'");
}

DecodeOptions options_for(const RunArgs &a, double kappa) {
    DecodeOptions opts;
    opts.policy.kind = policy_kind_from_name(a.policy);
    opts.policy.penalties.kappa = kappa;
    opts.policy.penalties.nu = a.nu;
    opts.policy.wait_k = a.wait_k;
    opts.policy.alignatt_window = a.window;
    return opts;
}

std::vector<SynthExample> load_eval_corpus(const RunArgs &a) {
    SynthConfig sc;
    auto corpus = load_corpus(a.corpus, sc);
    if (a.silence_chunks > 0) {
        for (SynthExample &ex : corpus) ex = inject_silence(ex, a.silence_chunks);
    }
    return corpus;
}

int run_decode(const RunArgs &a) {
    auto model = load_model(a.model_path);
    auto corpus = load_eval_corpus(a);
    EvalResult ev = evaluate(*model, corpus, options_for(a, a.kappa));
    if (!a.logs_out.empty()) save_emission_logs_jsonl(a.logs_out, ev.logs);
    const Vocabulary &vocab = model->vocabulary();
    for (const auto &hyp : ev.hypotheses) {
        for (size_t i = 0; i < hyp.size(); ++i) {
            std::cout << (i ? " " : "") << vocab.token_string(hyp[i]);
        }
        std::cout << "\n";
    }
    if (ev.truncated > 0) {
        std::cerr << ev.truncated << " decodes were truncated at an emission cap\n";
        return kExitRuntime;
    }
    return 0;
}

int run_eval(const RunArgs &a) {
    auto model = load_model(a.model_path);
    auto corpus = load_eval_corpus(a);
    std::cout << report_csv_header() << "\n";
    if (a.sweep_mode) {
        for (double kappa : a.sweep_kappa) {
            EvalResult ev = evaluate(*model, corpus, options_for(a, kappa));
            std::cout << report_csv_row(make_report_row(a.policy, kappa, a.csv_label, ev)) << "\n";
        }
    } else {
        double parameter = a.policy == "wait_k" ? a.wait_k : a.kappa;
        EvalResult ev = evaluate(*model, corpus, options_for(a, a.kappa));
        std::cout << report_csv_row(make_report_row(a.policy, parameter, a.csv_label, ev)) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Streaming speech translation sandbox"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App *g = app.add_subcommand("gen-data", "Generate a synthetic corpus");
    g->add_option("--out", gen.out, "Corpus JSONL path")->required();
    g->add_option("--n", gen.n, "Number of utterances");
    g->add_option("--seed", gen.config.seed, "Corpus seed");
    g->add_option("--vocab", gen.config.vocab_size, "Text vocabulary size, <EOS> included");
    g->add_option("--min-len", gen.config.min_source_len, "Minimum source length");
    g->add_option("--max-len", gen.config.max_source_len, "Maximum source length");
    g->add_option("--reorder", gen.reorder, "monotonic | local_swap | block_reorder");
    g->add_option("--silence-chunks", gen.config.silence_prefix_chunks,
                  "Upper bound of the per-utterance silence prefix");
    g->add_option("--silence-suffix-chunks", gen.config.silence_suffix_chunks,
                  "Upper bound of the per-utterance trailing silence");
    g->add_option("--frame-noise", gen.config.frame_noise_std, "Frame noise std");

    TrainArgs tr;
    CLI::App *t = app.add_subcommand("train", "Train a model on a corpus");
    t->add_option("--corpus", tr.corpus, "Corpus JSONL path")->required();
    t->add_option("--out", tr.out, "Model checkpoint path")->required();
    t->add_option("--arch", tr.arch, "intermixed | crossattn");
    t->add_option("--steps", tr.train.steps, "Optimizer steps");
    t->add_option("--batch", tr.train.batch_size, "Batch size");
    t->add_option("--lr", tr.train.lr, "Peak learning rate");
    t->add_option("--seed", tr.train.seed, "Training seed");
    t->add_option("--init-seed", tr.model.init_seed, "Parameter init seed");
    t->add_option("--width", tr.model.width, "Model width");
    t->add_option("--layers", tr.model.num_layers, "Transformer layers");
    t->add_option("--ee-layer", tr.model.early_exit_layer, "Early-exit layer (0 disables)");
    t->add_option("--policy-weight", tr.train.policy_weight, "Early-exit loss weight");
    t->add_option("--smoothing", tr.smoothing, "Label smoothing");
    t->add_option("--k", tr.wait_k, "Wait-k for the crossattn key mask");
    t->add_option("--corrupt-alignments", tr.corrupt_fraction,
                  "Fraction of target words moved to premature anchors");
    t->add_option("--corrupt-seed", tr.corrupt_seed, "Corruption seed");
    t->add_option("--delay-chunks", tr.delay_chunks,
                  "Upper bound of the per-utterance uniform emission delay");
    t->add_option("--delay-seed", tr.delay_seed, "Emission delay seed");
    t->add_option("--log-every", tr.train.log_every, "Progress interval (0 silent)");

    RunArgs rn;
    CLI::App *d = app.add_subcommand("decode", "Stream-decode a corpus, printing hypotheses");
    CLI::App *e = app.add_subcommand("eval", "Evaluate a model, printing a CSV report");
    for (CLI::App *s : {d, e}) {
        s->add_option("--model", rn.model_path, "Model checkpoint path")->required();
        s->add_option("--corpus", rn.corpus, "Corpus JSONL path")->required();
        s->add_option("--policy", rn.policy,
                      "wait_k | alignatt | intermixed | intermixed+early_exit");
        s->add_option("--kappa", rn.kappa, "Wait penalty on the step head");
        s->add_option("--nu", rn.nu, "Wait penalty on the early-exit head");
        s->add_option("--k", rn.wait_k, "Wait-k chunks");
        s->add_option("--window", rn.window, "AlignAtt frontier window, in chunks");
        s->add_option("--silence-chunks", rn.silence_chunks,
                      "Silence chunks injected before every utterance");
    }
    d->add_option("--logs-out", rn.logs_out, "Emission log JSONL path");
    e->add_option("--label", rn.csv_label, "Corpus label for the CSV rows");
    e->add_option("--sweep-kappa", rn.sweep_kappa, "Evaluate at each of these wait penalties");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &err) {
        int code = app.exit(err);
        return code == 0 ? 0 : kExitBadArgs;
    }

    try {
        if (g->parsed()) return run_gen(gen);
        if (t->parsed()) return run_train(tr);
        rn.sweep_mode = !rn.sweep_kappa.empty();
        if (d->parsed()) return run_decode(rn);
        return run_eval(rn);
    } catch (const BadInput &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const CheckpointError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadArgs;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
