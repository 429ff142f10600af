#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "intermix/decode.hpp"
#include "intermix/run.hpp"

namespace py = pybind11;
using namespace intermix;

PYBIND11_MODULE(_intermix, m) {
    m.doc() = "Streaming speech translation sandbox";

    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
    py::register_exception<TruncatedDecode>(m, "TruncatedDecodeError", PyExc_RuntimeError);

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("make", &Vocabulary::make, py::arg("num_text_tokens"))
        .def_readonly("num_text_tokens", &Vocabulary::num_text_tokens)
        .def_readonly("eos_id", &Vocabulary::eos_id)
        .def_readonly("wait_id", &Vocabulary::wait_id)
        .def("size", &Vocabulary::size)
        .def("is_text", &Vocabulary::is_text)
        .def("is_wait", &Vocabulary::is_wait)
        .def("token_string", &Vocabulary::token_string)
        .def("token_from_string", &Vocabulary::token_from_string);

    py::class_<FrameStream>(m, "FrameStream")
        .def(py::init<>())
        .def_readwrite("frames", &FrameStream::frames)
        .def_readwrite("frames_per_chunk", &FrameStream::frames_per_chunk)
        .def_readwrite("chunk_ms", &FrameStream::chunk_ms)
        .def("num_chunks", &FrameStream::num_chunks)
        .def("duration_seconds", &FrameStream::duration_seconds);

    py::class_<Emission>(m, "Emission")
        .def_readonly("token", &Emission::token)
        .def_readonly("chunk_index", &Emission::chunk_index);

    py::class_<EmissionLog>(m, "EmissionLog")
        .def(py::init<>())
        .def_readwrite("emissions", &EmissionLog::emissions)
        .def_readwrite("model_calls", &EmissionLog::model_calls)
        .def_readwrite("policy_calls", &EmissionLog::policy_calls)
        .def_readwrite("total_chunks", &EmissionLog::total_chunks)
        .def_readwrite("chunk_ms", &EmissionLog::chunk_ms);

    py::enum_<ReorderMode>(m, "ReorderMode")
        .value("MONOTONIC", ReorderMode::Monotonic)
        .value("LOCAL_SWAP", ReorderMode::LocalSwap)
        .value("BLOCK_REORDER", ReorderMode::BlockReorder);

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &SynthConfig::vocab_size)
        .def_readwrite("min_source_len", &SynthConfig::min_source_len)
        .def_readwrite("max_source_len", &SynthConfig::max_source_len)
        .def_readwrite("frame_dim", &SynthConfig::frame_dim)
        .def_readwrite("frames_per_chunk", &SynthConfig::frames_per_chunk)
        .def_readwrite("chunk_ms", &SynthConfig::chunk_ms)
        .def_readwrite("reorder_mode", &SynthConfig::reorder_mode)
        .def_readwrite("max_phrase_len", &SynthConfig::max_phrase_len)
        .def_readwrite("silence_prefix_chunks", &SynthConfig::silence_prefix_chunks)
        .def_readwrite("silence_suffix_chunks", &SynthConfig::silence_suffix_chunks)
        .def_readwrite("frame_noise_std", &SynthConfig::frame_noise_std)
        .def_readwrite("seed", &SynthConfig::seed)
        .def("vocabulary", &SynthConfig::vocabulary);

    py::class_<SynthExample>(m, "SynthExample")
        .def_readonly("source_tokens", &SynthExample::source_tokens)
        .def_readonly("target_tokens", &SynthExample::target_tokens)
        .def_readonly("frames", &SynthExample::frames)
        .def_readonly("word_end_frames", &SynthExample::word_end_frames);

    m.def("generate_corpus", &generate_corpus, py::arg("config"), py::arg("n"));
    m.def("inject_silence", &inject_silence, py::arg("example"), py::arg("chunks"),
          py::arg("seed") = 0x51eece);

    py::enum_<LayoutSlotKind>(m, "LayoutSlotKind")
        .value("SPEECH_CHUNK", LayoutSlotKind::SpeechChunk)
        .value("TEXT_TOKEN", LayoutSlotKind::TextToken);

    py::class_<LayoutSlot>(m, "LayoutSlot")
        .def_static("chunk", &LayoutSlot::chunk)
        .def_static("token", &LayoutSlot::token)
        .def_readonly("kind", &LayoutSlot::kind)
        .def_readonly("index", &LayoutSlot::index);

    py::class_<StepSequence>(m, "StepSequence")
        .def(py::init<>())
        .def_readwrite("steps", &StepSequence::steps)
        .def("well_formed", &StepSequence::well_formed);

    py::class_<Supervision>(m, "Supervision")
        .def_readonly("steps", &Supervision::steps)
        .def_readonly("input_layout", &Supervision::input_layout)
        .def_readonly("word_emit_chunk", &Supervision::word_emit_chunk);

    m.def("compile_step_sequence", &compile_step_sequence, py::arg("anchors"),
          py::arg("word_end_frames"), py::arg("stream"), py::arg("target"), py::arg("vocab"));

    py::class_<TrainingExample>(m, "TrainingExample")
        .def_readonly("supervision", &TrainingExample::supervision)
        .def_readonly("stream", &TrainingExample::stream)
        .def_readonly("target", &TrainingExample::target);

    m.def("compile_corpus", &compile_corpus, py::arg("corpus"), py::arg("vocab"));
    m.def("compile_corpus_corrupt", &compile_corpus_corrupt, py::arg("corpus"), py::arg("vocab"),
          py::arg("fraction"), py::arg("seed"));
    m.def("compile_corpus_delayed", &compile_corpus_delayed, py::arg("corpus"), py::arg("vocab"),
          py::arg("max_extra_chunks"), py::arg("seed"),
          py::arg("delay_weights") = std::vector<double>{});

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("width", &ModelConfig::width)
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("mlp_hidden", &ModelConfig::mlp_hidden)
        .def_readwrite("frame_dim", &ModelConfig::frame_dim)
        .def_readwrite("early_exit_layer", &ModelConfig::early_exit_layer)
        .def_readwrite("label_smoothing", &ModelConfig::label_smoothing)
        .def_readwrite("init_seed", &ModelConfig::init_seed);

    py::class_<StepModel>(m, "StepModel");

    py::class_<IntermixedModel, StepModel>(m, "IntermixedModel")
        .def(py::init<ModelConfig, Vocabulary>(), py::arg("config"), py::arg("vocab"))
        .def("forward_step", &IntermixedModel::forward_step, py::arg("layout_prefix"),
             py::arg("stream"), py::arg("at_stream_end"))
        .def("early_exit_head", &IntermixedModel::early_exit_head, py::arg("layout_prefix"),
             py::arg("stream"), py::arg("at_stream_end"))
        .def("step_sequence_loss", &IntermixedModel::step_sequence_loss)
        .def("multitask_loss", &IntermixedModel::multitask_loss)
        .def("save", &IntermixedModel::save)
        .def_static("load", &IntermixedModel::load);

    py::class_<CrossAttnConfig>(m, "CrossAttnConfig")
        .def(py::init<>())
        .def_readwrite("width", &CrossAttnConfig::width)
        .def_readwrite("encoder_layers", &CrossAttnConfig::encoder_layers)
        .def_readwrite("decoder_layers", &CrossAttnConfig::decoder_layers)
        .def_readwrite("num_heads", &CrossAttnConfig::num_heads)
        .def_readwrite("mlp_hidden", &CrossAttnConfig::mlp_hidden)
        .def_readwrite("frame_dim", &CrossAttnConfig::frame_dim)
        .def_readwrite("wait_k", &CrossAttnConfig::wait_k)
        .def_readwrite("init_seed", &CrossAttnConfig::init_seed);

    py::class_<CrossAttnModel, StepModel>(m, "CrossAttnModel")
        .def(py::init<CrossAttnConfig, Vocabulary>(), py::arg("config"), py::arg("vocab"))
        .def("next_token_logits", &CrossAttnModel::next_token_logits)
        .def("save", &CrossAttnModel::save)
        .def_static("load", &CrossAttnModel::load);

    py::class_<ScriptedOracle, StepModel>(m, "ScriptedOracle")
        .def(py::init<const Supervision &, Vocabulary, double>(), py::arg("gold"),
             py::arg("vocab"), py::arg("peak_logit") = 25.0)
        .def("enable_early_exit", &ScriptedOracle::enable_early_exit, py::arg("margin") = 1.0)
        .def("force_wait_at_chunk", &ScriptedOracle::force_wait_at_chunk);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("policy_weight", &TrainConfig::policy_weight)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("log_every", &TrainConfig::log_every);

    m.def("train",
          py::overload_cast<IntermixedModel &, const std::vector<TrainingExample> &,
                            const TrainConfig &>(&train));
    m.def("train_baseline",
          py::overload_cast<CrossAttnModel &, const std::vector<TrainingExample> &,
                            const TrainConfig &>(&train));

    py::enum_<PolicyKind>(m, "PolicyKind")
        .value("WAIT_K", PolicyKind::WaitK)
        .value("ALIGN_ATT", PolicyKind::AlignAtt)
        .value("INTERMIXED", PolicyKind::Intermixed)
        .value("INTERMIXED_EARLY_EXIT", PolicyKind::IntermixedEarlyExit);

    py::class_<PenaltyConfig>(m, "PenaltyConfig")
        .def(py::init<>())
        .def_readwrite("kappa", &PenaltyConfig::kappa)
        .def_readwrite("nu", &PenaltyConfig::nu);

    py::class_<PolicyConfig>(m, "PolicyConfig")
        .def(py::init<>())
        .def_readwrite("kind", &PolicyConfig::kind)
        .def_readwrite("penalties", &PolicyConfig::penalties)
        .def_readwrite("wait_k", &PolicyConfig::wait_k)
        .def_readwrite("alignatt_window", &PolicyConfig::alignatt_window);

    py::class_<FlushConfig>(m, "FlushConfig")
        .def(py::init<>())
        .def_readwrite("max_flush_tokens", &FlushConfig::max_flush_tokens);

    py::class_<DecodeOptions>(m, "DecodeOptions")
        .def(py::init<>())
        .def_readwrite("policy", &DecodeOptions::policy)
        .def_readwrite("flush", &DecodeOptions::flush)
        .def_readwrite("per_chunk_emission_cap", &DecodeOptions::per_chunk_emission_cap);

    py::class_<DecodeResult>(m, "DecodeResult")
        .def_readonly("tokens", &DecodeResult::tokens)
        .def_readonly("log", &DecodeResult::log);

    m.def("stream_decode", &stream_decode, py::arg("model"), py::arg("stream"), py::arg("opts"));
    m.def("decode_offline", &decode_offline, py::arg("model"), py::arg("stream"),
          py::arg("flush") = FlushConfig{});

    py::enum_<ReferenceLengthMode>(m, "ReferenceLengthMode")
        .value("HYPOTHESIS", ReferenceLengthMode::Hypothesis)
        .value("REFERENCE", ReferenceLengthMode::Reference);

    m.def("average_logical_latency", &average_logical_latency);
    m.def("average_lagging", &average_lagging, py::arg("log"),
          py::arg("mode") = ReferenceLengthMode::Hypothesis, py::arg("reference_length") = 0);
    m.def("laal", &laal);
    m.def("calls_per_output_token", &calls_per_output_token);
    m.def("edit_distance", &edit_distance);

    py::class_<QualityReport>(m, "QualityReport")
        .def_readonly("exact_match_rate", &QualityReport::exact_match_rate)
        .def_readonly("mean_similarity", &QualityReport::mean_similarity);

    py::class_<LatencyReport>(m, "LatencyReport")
        .def_readonly("all_seconds", &LatencyReport::all_seconds)
        .def_readonly("al_seconds", &LatencyReport::al_seconds);

    py::class_<EvalResult>(m, "EvalResult")
        .def_readonly("latency", &EvalResult::latency)
        .def_readonly("quality", &EvalResult::quality)
        .def_readonly("calls_per_token", &EvalResult::calls_per_token)
        .def_readonly("policy_calls_per_token", &EvalResult::policy_calls_per_token)
        .def_readonly("truncated", &EvalResult::truncated)
        .def_readonly("logs", &EvalResult::logs)
        .def_readonly("hypotheses", &EvalResult::hypotheses);

    m.def("evaluate", &evaluate, py::arg("model"), py::arg("corpus"), py::arg("opts"));
}
