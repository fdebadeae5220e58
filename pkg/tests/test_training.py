"""Adam updates, config parsing, the training loop and its determinism."""

import numpy as np
import pytest

import salientfeat.training as training_mod
from salientfeat.evaluation import (evaluate_mma3, make_eval_pairs,
                                    random_keypoint_mma3, style_mean_on_pairs)
from salientfeat.network import load_checkpoint
from salientfeat.synth import synthetic_corpus
from salientfeat.tensor import Tensor
from salientfeat.training import (TrainConfig, TrainLog, TrainLogEntry, adam_step,
                                  init_adam_state, train)


def tiny_config(**overrides):
    base = TrainConfig.desk()
    merged = {"steps": "2", "batch_size": "2", "crop": "32", "num_negatives": "8",
              "sample_radius": "4"}
    merged.update({k: str(v) for k, v in overrides.items()})
    return TrainConfig.from_overrides(merged, base=base)


@pytest.fixture(scope="module")
def corpus():
    return synthetic_corpus(4, 56, seed=3)


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------
def test_adam_first_step_closed_form():
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    state = init_adam_state(p)
    adam_step(p, {"w": np.array([1.0])}, state, lr=1e-4, weight_decay=0.0)
    assert p["w"].data[0] == pytest.approx(-1e-4, rel=1e-6)


def test_adam_zero_gradient_only_decays():
    p = {"w": Tensor(np.array([0.5, -0.5]), requires_grad=True)}
    state = init_adam_state(p)
    adam_step(p, {"w": np.zeros(2)}, state, lr=1e-4, weight_decay=5e-4)
    assert np.all(np.abs(p["w"].data) < 0.5)
    np.testing.assert_allclose(np.abs(p["w"].data), 0.5 - 1e-4, rtol=1e-3)


def test_adam_weight_decay_shrinks_norm_monotonically():
    rng = np.random.default_rng(0)
    p = {"w": Tensor(rng.uniform(0.1, 1.0, size=8) * rng.choice([-1, 1], 8),
                     requires_grad=True)}
    state = init_adam_state(p)
    norms = [np.linalg.norm(p["w"].data)]
    for _ in range(10):
        adam_step(p, {"w": np.zeros(8)}, state, lr=1e-4, weight_decay=5e-4)
        norms.append(np.linalg.norm(p["w"].data))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_adam_rejects_non_finite_gradients():
    p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
    state = init_adam_state(p)
    with pytest.raises(FloatingPointError, match="w"):
        adam_step(p, {"w": np.array([np.nan])}, state, lr=1e-4, weight_decay=0.0)
    assert p["w"].data[0] == 1.0  # untouched
    assert state["t"] == 0


def test_adam_deterministic():
    results = []
    for _ in range(2):
        rng = np.random.default_rng(7)
        p = {"w": Tensor(rng.normal(size=5), requires_grad=True)}
        state = init_adam_state(p)
        for _ in range(5):
            adam_step(p, {"w": rng.normal(size=5)}, state, lr=1e-3,
                      weight_decay=1e-4)
        results.append(p["w"].data.copy())
    np.testing.assert_array_equal(results[0], results[1])


# ----------------------------------------------------------------------
# config files
# ----------------------------------------------------------------------
def test_config_file_roundtrip(tmp_path):
    cfg = TrainConfig.desk()
    path = tmp_path / "train.cfg"
    cfg.to_file(path)
    assert TrainConfig.from_file(path) == cfg


def test_config_file_parsing(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("# comment\nlr = 0.001\nsteps=7\nno_style=1\n"
                    "channel_widths=4,4,8\ndilations=1,1,2\n\n")
    cfg = TrainConfig.from_file(path)
    assert cfg.lr == 0.001 and cfg.steps == 7 and cfg.no_style is True
    assert cfg.channel_widths == (4, 4, 8) and cfg.dilations == (1, 1, 2)
    # untouched keys keep the desk preset values
    assert cfg.crop == TrainConfig.desk().crop


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("learning_rate=0.1\n")
    with pytest.raises(ValueError, match="unknown config key"):
        TrainConfig.from_file(path)


def test_config_rejects_malformed_line(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("lr 0.1\n")
    with pytest.raises(ValueError, match="key=value"):
        TrainConfig.from_file(path)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(steps=-1)


def test_paper_scale_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.crop, cfg.epochs,
            cfg.patch_size) == (1e-4, 5e-4, 8, 192, 25, 16)
    assert (cfg.lambda_reliability, cfg.lambda_repeatability,
            cfg.lambda_covariance) == (1.0, 1.0, 2.0)


# ----------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------
def test_train_writes_artifacts(tmp_path, corpus):
    cfg = tiny_config(checkpoint_every=1)
    net, log = train(cfg, corpus, tmp_path)
    assert (tmp_path / "train_log.txt").exists()
    assert (tmp_path / "timing.txt").exists()
    assert (tmp_path / "checkpoint_step1.sftc").exists()
    loaded, step, opt = load_checkpoint(tmp_path / "checkpoint.sftc")
    assert step == cfg.steps and opt is not None and opt["t"] == cfg.steps
    for name in net.params:
        np.testing.assert_array_equal(loaded.params[name].data,
                                      net.params[name].data)
    assert len(log.entries) == cfg.steps


def test_train_deterministic_logs_and_params(tmp_path, corpus):
    cfg = tiny_config()
    net_a, log_a = train(cfg, corpus, tmp_path / "a")
    net_b, log_b = train(cfg, corpus, tmp_path / "b")
    assert (tmp_path / "a/train_log.txt").read_bytes() == \
           (tmp_path / "b/train_log.txt").read_bytes()
    for name in net_a.params:
        np.testing.assert_array_equal(net_a.params[name].data,
                                      net_b.params[name].data)


def test_train_seed_changes_trajectory(corpus):
    _, log_a = train(tiny_config(seed=0), corpus)
    _, log_b = train(tiny_config(seed=1), corpus)
    assert log_a.to_text() != log_b.to_text()


def test_train_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty"):
        train(tiny_config(), [])


def test_both_cov_flags_match_zero_weight_trajectory(corpus):
    flagged, _ = train(tiny_config(no_style=1, no_structure=1), corpus)
    unweighted, _ = train(tiny_config(lambda_covariance=0.0), corpus)
    for name in flagged.params:
        np.testing.assert_array_equal(flagged.params[name].data,
                                      unweighted.params[name].data)


def test_both_cov_flags_log_zero_cov(corpus):
    _, log = train(tiny_config(no_style=1, no_structure=1), corpus)
    assert all(e.l_cov == 0.0 for e in log.entries)


def test_non_finite_loss_aborts_with_checkpoint(tmp_path, corpus, monkeypatch):
    real = training_mod.pair_losses
    calls = {"n": 0}

    def sabotaged(net, pair, config, rng):
        calls["n"] += 1
        if calls["n"] > 2:  # poison the second step
            return (Tensor(np.nan), Tensor(0.0), Tensor(0.0), 0.0, 0.0)
        return real(net, pair, config, rng)

    monkeypatch.setattr(training_mod, "pair_losses", sabotaged)
    with pytest.raises(FloatingPointError, match="step 2"):
        train(tiny_config(), corpus, tmp_path)
    assert (tmp_path / "checkpoint_lastgood.sftc").exists()
    assert "1\t" in (tmp_path / "train_log.txt").read_text()


def test_log_text_format():
    log = TrainLog()
    log.append(TrainLogEntry(1, 0.5, 1.0, 1.5, 3.0, 0.1, 0.05))
    text = log.to_text()
    header, row = text.strip().splitlines()
    assert header.startswith("# step\t")
    assert row.split("\t")[0] == "1" and row.split("\t")[4] == "3.0"


def test_smoothed_totals_window():
    log = TrainLog()
    for i, v in enumerate([4.0, 2.0, 0.0], start=1):
        log.append(TrainLogEntry(i, 0, 0, 0, v, 0, 0))
    assert log.smoothed_totals(window=2) == [4.0, 3.0, 1.0]


# ----------------------------------------------------------------------
# evaluation helpers
# ----------------------------------------------------------------------
def test_eval_pair_kinds():
    photometric = make_eval_pairs(2, 32, seed=0, kind="photometric")
    warp = make_eval_pairs(2, 32, seed=0, kind="warp")
    for p in photometric:
        np.testing.assert_allclose(p.homography.matrix, np.eye(3), atol=1e-9)
        assert not np.allclose(p.image_a, p.image_b, atol=1e-3)
    assert any(not np.allclose(p.homography.matrix, np.eye(3), atol=1e-3)
               for p in warp)
    with pytest.raises(ValueError):
        make_eval_pairs(1, 32, seed=0, kind="nope")


def test_evaluation_metrics_in_range(corpus):
    net, _ = train(tiny_config(), corpus)
    pairs = make_eval_pairs(3, 32, seed=5)
    score = evaluate_mma3(net, pairs, budget=32)
    baseline = random_keypoint_mma3(net, pairs, budget=32, seed=6)
    assert 0.0 <= score <= 1.0 and 0.0 <= baseline <= 1.0
    photometric = make_eval_pairs(3, 32, seed=7, kind="photometric")
    assert style_mean_on_pairs(net, photometric) >= 0.0
