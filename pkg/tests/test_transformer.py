import numpy as np
import pytest

import protoform.engine as E
from protoform import corpus as C
from protoform import transformer as T
from protoform.corpus import ParseOptions, TokenizerOptions, build_vocab, parse_dataset
from protoform.engine.rng import philox

ORTH = ParseOptions(tokenizer=TokenizerOptions(mode="orthographic"))

TINY = T.TransformerConfig(
    d_model=32, n_heads=4, n_encoder_layers=1, n_decoder_layers=1,
    d_feedforward=64, dropout_p=0.0, lr=3e-3, warmup_epochs=5,
    total_epochs=40, weight_decay=0.0, batch_size=4, seed=3,
)


def toy_dataset(n=24, seed=0):
    rng = philox(99, seed)
    rows = ["id\tA\tB\tP"]
    alphabet = "ptkmnsaiu"
    for i in range(n):
        proto = "".join(alphabet[j] for j in rng.integers(0, 9, size=3))
        rows.append(f"s{i}\t{proto}{'x' * (i % 3)}\t{proto[::-1]}\t{proto}")
    return parse_dataset("\n".join(rows), ORTH)


@pytest.fixture(scope="module")
def toy():
    ds = toy_dataset()
    vocab = build_vocab(ds)
    return ds, vocab


class TestPositionalEncoding:
    def test_restart_indices(self):
        pe = T.positional_encoding([2, 2], 8)
        table = T.sinusoid_table(2, 8)
        np.testing.assert_array_equal(pe, table[[0, 1, 0, 1]])

    def test_position_zero_row(self):
        row = T.sinusoid_table(1, 8)[0]
        np.testing.assert_allclose(row, [0, 1, 0, 1, 0, 1, 0, 1], atol=1e-15)

    def test_position_one_first_pair(self):
        row = T.sinusoid_table(2, 8)[1]
        assert row[0] == pytest.approx(np.sin(1.0), abs=1e-15)
        assert row[1] == pytest.approx(np.cos(1.0), abs=1e-15)

    def test_restart_makes_position_k_identical_everywhere(self):
        pe = T.positional_encoding([3, 5, 2], 16)
        table = T.sinusoid_table(5, 16)
        # daughter-local position 1 appears at offsets 1, 4, and 9
        for off in (1, 4, 9):
            np.testing.assert_array_equal(pe[off], table[1])


class TestEncoder:
    def test_language_embedding_additivity(self, toy):
        ds, vocab = toy
        cfg = T.TransformerConfig(d_model=16, n_heads=2, n_encoder_layers=0,
                                  n_decoder_layers=1, d_feedforward=16,
                                  dropout_p=0.0, seed=1)
        model = T.Model(cfg, vocab, ds.languages)
        cs = C.CognateSet("x", ("p",), {"A": ("a",), "B": ("a",)})
        enc = C.encode_cognate_set(cs, vocab, ds)
        memory = model.encode_batch(T.collate([enc])).data[0]
        lang = model.params["lang_emb"].data
        np.testing.assert_allclose(memory[0] - memory[1], lang[0] - lang[1],
                                   rtol=0, atol=1e-12)

    def test_pad_columns_get_zero_attention(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        encs = C.encode_dataset(ds, vocab)[:3]
        batch = T.collate(encs)
        assert batch.src_pad.any()
        trace = {}
        with E.no_grad():
            model.encode_batch(batch, trace=trace)
        attn = trace["enc0.attn"]  # (B, H, S, S)
        pad = batch.src_pad
        for b in range(attn.shape[0]):
            assert np.all(attn[b][:, :, pad[b]] == 0.0)
            np.testing.assert_allclose(attn[b].sum(axis=-1), 1.0, atol=1e-9)

    def test_daughter_order_is_meaningful(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        a = C.EncodedExample("x", [5, 6, 7], [0, 1, 0], [0, 0, 1], [1, 5, 2])
        b = C.EncodedExample("x", [7, 5, 6], [0, 0, 1], [1, 0, 0], [1, 5, 2])
        with E.no_grad():
            ma = model.encode_batch(T.collate([a])).data
            mb = model.encode_batch(T.collate([b])).data
        assert not np.allclose(ma, mb)

    def test_source_longer_than_maximum_rejected(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages, max_source_len=8)
        long = C.EncodedExample("x", [5] * 9, list(range(9)), [0] * 9, [1, 2])
        with pytest.raises(E.EngineError, match="maximum"):
            model.encode_batch(T.collate([long]))


class TestDecoder:
    def test_causality_exact(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        enc = C.encode_dataset(ds, vocab)[0]
        base = T.forward_teacher_forced(model, enc).data
        for t in range(1, len(enc.target) - 1):
            perturbed = C.EncodedExample(
                enc.set_id, enc.source, enc.positions, enc.languages,
                enc.target[:t] + [(enc.target[t] + 1) % vocab.n_target or 4] + enc.target[t + 1:],
            )
            got = T.forward_teacher_forced(model, perturbed).data
            np.testing.assert_array_equal(base[:t], got[:t])

    def test_pad_targets_do_not_change_loss(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        enc = C.encode_dataset(ds, vocab)[0]
        batch = T.collate([enc])
        padded = T.Batch(batch.src, batch.pos, batch.lang, batch.src_pad,
                         np.concatenate([batch.tgt, np.zeros((1, 3), np.int64)], axis=1),
                         batch.set_ids)
        with E.no_grad():
            a = float(model.loss_batch(batch).data)
            b = float(model.loss_batch(padded).data)
        assert a == b

    def test_logit_shapes_on_two_set_batch(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        batch = T.collate(C.encode_dataset(ds, vocab)[:2])
        with E.no_grad():
            memory = model.encode_batch(batch)
            logits = model.decode_batch(memory, batch.tgt_in, batch.src_pad)
        assert memory.data.shape == (2, batch.src.shape[1], TINY.d_model)
        assert logits.data.shape == (2, batch.tgt.shape[1] - 1, vocab.n_target)

    def test_bos_required(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        bad = C.EncodedExample("x", [5], [0], [0], [5, 2])
        with pytest.raises(E.EngineError, match="BOS"):
            T.forward_teacher_forced(model, bad)


class TestGreedyDecode:
    def test_max_len_truncation(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        model.params["out.b"].data[C.EOS_ID] = -1e9  # EOS never wins
        enc = C.encode_dataset(ds, vocab)[:2]
        words = T.greedy_decode(model, enc, max_len=5)
        assert all(len(w) == 5 for w in words)

    def test_immediate_eos_gives_empty_word(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        model.params["out.b"].data[C.EOS_ID] = 1e9
        words = T.greedy_decode(model, C.encode_dataset(ds, vocab)[:2], max_len=5)
        assert words == [(), ()]

    def test_specials_never_emitted(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        for w in T.greedy_decode(model, C.encode_dataset(ds, vocab)[:4], max_len=6):
            assert all(t not in C.SPECIALS for t in w)


class TestTraining:
    def test_epoch_zero_loss_near_log_vocab(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        batch = T.collate(C.encode_dataset(ds, vocab))
        with E.no_grad():
            loss = float(model.loss_batch(batch).data)
        assert loss == pytest.approx(np.log(vocab.n_target), rel=0.10)

    def test_overfits_single_example(self, toy):
        ds, vocab = toy
        single = C.Dataset(ds.sets[:1], ds.languages, ds.proto_name)
        cfg = T.TransformerConfig(
            d_model=32, n_heads=4, n_encoder_layers=1, n_decoder_layers=1,
            d_feedforward=64, dropout_p=0.0, lr=3e-3, warmup_epochs=5,
            total_epochs=60, weight_decay=0.0, batch_size=1, seed=7,
        )
        model = T.Model(cfg, vocab, ds.languages)
        trained = T.train(model, single, single, cfg)
        pred = T.greedy_decode(trained.model, C.encode_dataset(single, vocab),
                               trained.max_decode_len)
        assert pred[0] == single.sets[0].proto

    def test_training_is_bitwise_deterministic(self, toy):
        ds, vocab = toy
        train_ds = C.Dataset(ds.sets[:12], ds.languages, ds.proto_name)
        val_ds = C.Dataset(ds.sets[12:16], ds.languages, ds.proto_name)
        cfg = T.TransformerConfig(
            d_model=16, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
            d_feedforward=32, dropout_p=0.1, lr=1e-3, warmup_epochs=2,
            total_epochs=4, weight_decay=1e-7, batch_size=4, seed=11,
        )
        runs = []
        for _ in range(2):
            model = T.Model(cfg, vocab, ds.languages)
            runs.append(T.train(model, train_ds, val_ds, cfg))
        assert runs[0].best_val_ped == runs[1].best_val_ped
        assert runs[0].best_epoch == runs[1].best_epoch
        for name in runs[0].model.params:
            np.testing.assert_array_equal(runs[0].model.params[name].data,
                                          runs[1].model.params[name].data)

    def test_best_epoch_minimizes_validation_ped(self, toy):
        ds, vocab = toy
        train_ds = C.Dataset(ds.sets[:12], ds.languages, ds.proto_name)
        val_ds = C.Dataset(ds.sets[12:16], ds.languages, ds.proto_name)
        cfg = T.TransformerConfig(
            d_model=16, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
            d_feedforward=32, dropout_p=0.0, lr=2e-3, warmup_epochs=2,
            total_epochs=6, weight_decay=0.0, batch_size=4, seed=2,
        )
        trained = T.train(T.Model(cfg, vocab, ds.languages), train_ds, val_ds, cfg)
        peds = [h["val_ped"] for h in trained.history]
        assert trained.best_val_ped == min(peds)
        assert trained.best_epoch == peds.index(min(peds))

    def test_divergence_aborts_with_epoch(self, toy):
        ds, vocab = toy
        train_ds = C.Dataset(ds.sets[:8], ds.languages, ds.proto_name)
        cfg = T.TransformerConfig(
            d_model=16, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
            d_feedforward=32, dropout_p=0.0, lr=1.0, warmup_epochs=1,
            total_epochs=3, weight_decay=0.0, batch_size=4, seed=2,
        )
        model = T.Model(cfg, vocab, ds.languages)
        model.params["out.w"].data[0, 0] = np.nan
        with pytest.raises(E.EngineError, match="diverged at epoch|epoch 0"):
            T.train(model, train_ds, train_ds, cfg)


class TestLanguageEmbeddings:
    def test_shape_and_keys(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        embs = T.extract_language_embeddings(model)
        assert set(embs) == set(ds.languages)
        assert all(v.shape == (TINY.d_model,) for v in embs.values())

    def test_untrained_equals_initialization_draw(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        rng = philox(0x1217, TINY.seed)
        bound = 1.0 / np.sqrt(TINY.d_model)
        rng.uniform(-bound, bound, (vocab.n_source, TINY.d_model))
        rng.uniform(-bound, bound, (vocab.n_target, TINY.d_model))
        expected = rng.uniform(-bound, bound, (len(ds.languages), TINY.d_model))
        embs = T.extract_language_embeddings(model)
        for lang in ds.languages:
            np.testing.assert_array_equal(embs[lang], expected[lang.index].astype(embs[lang].dtype))

    def test_copies_are_detached(self, toy):
        ds, vocab = toy
        model = T.Model(TINY, vocab, ds.languages)
        embs = T.extract_language_embeddings(model)
        embs[ds.languages[0]][:] = 0
        assert not np.all(model.params["lang_emb"].data[0] == 0)


class TestCheckpointRoundTrip:
    def test_save_load_decode_parity(self, toy, tmp_path):
        ds, vocab = toy
        train_ds = C.Dataset(ds.sets[:12], ds.languages, ds.proto_name)
        val_ds = C.Dataset(ds.sets[12:16], ds.languages, ds.proto_name)
        cfg = T.TransformerConfig(
            d_model=16, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
            d_feedforward=32, dropout_p=0.1, lr=1e-3, warmup_epochs=1,
            total_epochs=2, weight_decay=0.0, batch_size=4, seed=5,
        )
        trained = T.train(T.Model(cfg, vocab, ds.languages), train_ds, val_ds, cfg)
        prefix = str(tmp_path / "run")
        trained.save(prefix)
        loaded = T.TrainedModel.load(prefix)
        assert loaded.best_epoch == trained.best_epoch
        enc = C.encode_dataset(val_ds, vocab)
        a = T.greedy_decode(trained.model, enc, trained.max_decode_len)
        b = T.greedy_decode(loaded.model, enc, loaded.max_decode_len)
        assert a == b


class TestEndToEndGradient:
    def test_tiny_transformer_matches_finite_differences(self, toy):
        ds, vocab = toy
        cfg = T.TransformerConfig(
            d_model=8, n_heads=2, n_encoder_layers=2, n_decoder_layers=2,
            d_feedforward=16, dropout_p=0.0, lr=1e-3, warmup_epochs=1,
            total_epochs=1, weight_decay=0.0, batch_size=2, seed=13,
        )
        model = T.Model(cfg, vocab, ds.languages)
        batch = T.collate(C.encode_dataset(ds, vocab)[:2])

        def loss_value():
            with E.no_grad():
                return float(model.loss_batch(batch).data)

        E.zero_grads(model.params.values())
        E.backward(model.loss_batch(batch))

        rng = philox(1234)
        names = sorted(model.params)
        checked = 0
        attempts = 0
        while checked < 20 and attempts < 200:
            attempts += 1
            name = names[int(rng.integers(0, len(names)))]
            p = model.params[name]
            flat = p.data.reshape(-1)
            i = int(rng.integers(0, flat.size))
            analytic = 0.0 if p.grad is None else p.grad.reshape(-1)[i]
            orig = flat[i]
            flat[i] = orig + 1e-5
            fp = loss_value()
            flat[i] = orig - 1e-5
            fm = loss_value()
            flat[i] = orig
            numeric = (fp - fm) / 2e-5
            if abs(analytic) < 1e-7 and abs(numeric) < 1e-7:
                continue  # unused parameter entry (e.g. never-seen token row)
            assert abs(analytic - numeric) / max(abs(analytic), abs(numeric)) < 1e-3, name
            checked += 1
        assert checked == 20
