import numpy as np
import pytest

import tonguerx as tx


def test_version():
    assert tx.__version__ == "0.1.0"


def test_tensor_buffer_round_trip():
    a = np.arange(24, dtype=float).reshape(2, 3, 4)
    t = tx.Tensor(a)
    assert t.shape == [2, 3, 4]
    assert np.array_equal(np.asarray(t), a)
    assert np.array_equal(t.numpy(), a)


def test_vocabulary_and_similarity():
    vocab = tx.build_vocabulary([["b", "a"], ["c", "a"]], [("alias_a", "a")])
    assert len(vocab) == 3
    assert vocab.id_of("alias_a") == vocab.id_of("a")
    s = tx.similarity([1, 2, 3], [2, 3, 4])
    assert (s.nc, s.np, s.ng) == (2, 3, 3)
    assert s.iou == pytest.approx(0.5)


def test_lda_round_trip(tmp_path):
    docs = [[0, 1, 2], [0, 1], [3, 4, 5], [3, 5]] * 10
    cfg = tx.LdaConfig.defaults(2, seed=3)
    cfg.alpha = 0.5
    cfg.burnin_sweeps = 30
    cfg.sampling_sweeps = 20
    model, doc_topics = tx.fit_lda(docs, 6, cfg)
    assert model.topic_count == 2
    assert len(doc_topics) == 40
    assert all(abs(sum(row) - 1.0) < 1e-12 for row in doc_topics)

    g = tx.infer_topics(model, [0, 1, 2], 7)
    assert tx.kl_topics(g, g) == 0.0

    path = str(tmp_path / "model.bin")
    tx.save_topic_model(model, path)
    again = tx.load_topic_model(path)
    assert again.phi_row(0) == model.phi_row(0)
    assert again.vocab_size == 6


def test_augment_zero_config_is_identity():
    rng = np.random.default_rng(5)
    images = [tx.Tensor(rng.uniform(0, 255, size=(6, 5, 3)))]
    cfg = tx.AugmentConfig()
    cfg.rotation_range_deg = 0.0
    cfg.width_shift_range = 0.0
    cfg.height_shift_range = 0.0
    cfg.shear_range = 0.0
    cfg.zoom_range = 0.0
    cfg.horizontal_flip = False
    out = tx.augment_images(images, cfg, 3, 2)
    assert len(out) == 6
    for source, image in out:
        assert source == 0
        assert np.array_equal(np.asarray(image), np.asarray(images[0]))


def test_synth_forward_and_report():
    cfg = tx.SynthConfig()
    cfg.samples = 8
    cfg.height = 32
    cfg.width = 32
    cfg.topic_count = 2
    cfg.herbs_per_topic = 4
    cfg.min_herbs = 2
    cfg.max_herbs = 4
    cfg.seed = 5
    world = tx.synth_generate(cfg)
    assert len(world.samples) == 8
    assert np.asarray(world.samples[0].image).shape == (32, 32, 3)

    spec = tx.ArchitectureSpec.mini("2cnn-aux", herbs=8, topics=2)
    net = tx.build_model(spec, seed=1)
    batch = np.stack([np.asarray(s.image) for s in world.samples[:2]])
    probs = tx.infer_herbs(net, tx.Tensor(batch))
    assert len(probs) == 2 and len(probs[0]) == 8
    assert all(0.0 <= p <= 1.0 for row in probs for p in row)

    herbs, empty = tx.predict_prescription(probs[0], threshold=1e-12)
    assert herbs == list(range(8)) and not empty

    pairs = [(list(s.herbs), list(s.herbs)) for s in world.samples]
    report = tx.build_report(pairs, model=world.planted, seed=0)
    assert report.p_sim == 1.0 and report.kl_t == 0.0


def test_pipeline_commands(tmp_path):
    config = tx.RunConfig()
    config.out = str(tmp_path / "runs")
    config.seed = 3
    config.synth.samples = 12
    config.synth.topic_count = 2
    config.synth.herbs_per_topic = 4
    config.synth.min_herbs = 2
    config.synth.max_herbs = 4
    synth_dir = tx.run_synth(config)
    config.manifest = synth_dir + "/manifest.tsv"
    stats_dir = tx.run_stats(config)
    text = open(stats_dir + "/stats.csv").read()
    assert "samples,12" in text
    assert tx.config_hash(config) == tx.config_hash(config)
