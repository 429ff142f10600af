import math

import pytest

import intermix as ix


def worked_example():
    """Two-phrase utterance over a 5-chunk stream; words audible at [3, 5, 5]."""
    vocab = ix.Vocabulary.make(10)
    stream = ix.FrameStream()
    stream.frames_per_chunk = 8
    stream.chunk_ms = 640
    stream.frames = [[0.0]] * 40
    sup = ix.compile_step_sequence([0, 1, 2, 2], [20, 36, 40], stream, [0, 1, 2, 9], vocab)
    return vocab, stream, sup


def test_vocabulary():
    vocab = ix.Vocabulary.make(10)
    assert vocab.size() == 11
    assert vocab.eos_id == 9
    assert vocab.wait_id == 10
    assert vocab.is_wait(vocab.wait_id)
    assert vocab.token_from_string(vocab.token_string(3)) == 3


def test_supervision_layout():
    vocab, stream, sup = worked_example()
    assert sup.steps.well_formed(vocab)
    waits = [s for s in sup.steps.steps if vocab.is_wait(s)]
    assert len(waits) == 4  # T - 1 waits over 5 chunks
    assert sup.word_emit_chunk == [3, 5, 5, 5]


def test_oracle_stream_decode():
    vocab, stream, sup = worked_example()
    oracle = ix.ScriptedOracle(sup, vocab)
    opts = ix.DecodeOptions()
    result = ix.stream_decode(oracle, stream, opts)
    assert result.tokens == [0, 1, 2, 9]
    assert [e.chunk_index for e in result.log.emissions] == [3, 5, 5, 5]
    assert result.log.model_calls == 8
    assert ix.average_logical_latency(result.log) == pytest.approx(0.88)
    assert ix.calls_per_output_token(result.log) == pytest.approx(2.0)


def test_early_exit_halves_model_calls():
    vocab, stream, sup = worked_example()
    oracle = ix.ScriptedOracle(sup, vocab)
    oracle.enable_early_exit()
    opts = ix.DecodeOptions()
    opts.policy.kind = ix.PolicyKind.INTERMIXED_EARLY_EXIT
    result = ix.stream_decode(oracle, stream, opts)
    assert result.tokens == [0, 1, 2, 9]
    assert result.log.model_calls == 4
    assert result.log.policy_calls == 5


def test_offline_decode_latency():
    vocab, stream, sup = worked_example()
    oracle = ix.ScriptedOracle(sup, vocab)
    result = ix.decode_offline(oracle, stream)
    assert ix.average_logical_latency(result.log) == pytest.approx(1.2)


def test_tiny_training_run(tmp_path):
    config = ix.SynthConfig()
    config.vocab_size = 8
    config.min_source_len = 2
    config.max_source_len = 3
    config.frame_dim = 4
    config.seed = 21
    corpus = ix.generate_corpus(config, 12)
    vocab = config.vocabulary()
    examples = ix.compile_corpus(corpus, vocab)

    mc = ix.ModelConfig()
    mc.width = 16
    mc.num_layers = 2
    mc.num_heads = 2
    mc.mlp_hidden = 32
    mc.frame_dim = 4
    mc.early_exit_layer = 1
    model = ix.IntermixedModel(mc, vocab)

    def mean_loss():
        return sum(
            model.multitask_loss(ex.supervision, ex.stream, 1.0) / len(ex.supervision.steps.steps)
            for ex in examples
        ) / len(examples)

    before = mean_loss()
    tc = ix.TrainConfig()
    tc.steps = 40
    tc.batch_size = 4
    ix.train(model, examples, tc)
    assert mean_loss() < before

    path = str(tmp_path / "model.json")
    model.save(path)
    back = ix.IntermixedModel.load(path)
    ex = examples[0]
    assert back.step_sequence_loss(ex.supervision, ex.stream) == pytest.approx(
        model.step_sequence_loss(ex.supervision, ex.stream)
    )
    with pytest.raises(ValueError):
        ix.IntermixedModel.load(str(tmp_path / "missing.json"))


def test_evaluate_with_oracles():
    config = ix.SynthConfig()
    config.vocab_size = 8
    config.min_source_len = 2
    config.max_source_len = 3
    config.frame_dim = 4
    config.seed = 5
    corpus = ix.generate_corpus(config, 5)
    vocab = config.vocabulary()
    for syn, ex in zip(corpus, ix.compile_corpus(corpus, vocab)):
        oracle = ix.ScriptedOracle(ex.supervision, vocab)
        result = ix.stream_decode(oracle, ex.stream, ix.DecodeOptions())
        assert result.tokens == list(syn.target_tokens)
