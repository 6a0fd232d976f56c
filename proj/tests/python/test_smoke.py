import math

import pytest

import crossnav

SMALL = """
n_viewpoints = 12
feature_dim = 6
landmark_vocab = 4
train_worlds = 2
unseen_worlds = 1
train_episodes = 8
seen_val_episodes = 4
unseen_val_episodes = 4
max_hops = 3
epochs_critic = 1
epochs_sl = 2
epochs_rl = 1
epochs_sil = 1
sil_rollouts = 3
seed = 3
"""


def test_default_config_round_trips():
    text = crossnav.default_config()
    assert "gamma" in text
    assert crossnav.Session(SMALL).config.count("=") == len(crossnav.config_keys())


def test_bad_config_raises():
    with pytest.raises(ValueError, match="line 1"):
        crossnav.Session("gamma = 1.5")


def test_grad_check_passes():
    errs = crossnav.grad_check(seed=1)
    assert set(errs) == {"navigator-step", "rollout-3step", "critic-mle"}
    assert max(errs.values()) < 1e-4


def test_discounted_returns():
    r = crossnav.discounted_returns([1.0, 2.0, 3.0], 0.5)
    assert r == pytest.approx([1 + 0.5 * 2 + 0.25 * 3, 2 + 0.5 * 3, 3.0])


def test_pipeline_and_checkpoint(tmp_path):
    s = crossnav.Session(SMALL)
    assert s.sizes["train"] == 8
    s.pretrain_critic()
    hist = s.train_sl()
    assert {h["phase"] for h in hist} == {"sl"}
    s.train_rl()
    s.train_sil("unseen")
    assert s.phase == "sil-unseen"
    m = s.evaluate("unseen_val")
    assert 0 <= m["spl"] <= m["sr"] <= m["osr"] <= 100
    assert math.isfinite(m["ne"])

    path = str(tmp_path / "s.ckpt")
    s.save_checkpoint(path)
    t = crossnav.Session(SMALL)
    t.load_checkpoint(path)
    assert t.phase == "sil-unseen"
    assert t.evaluate("seen_val") == s.evaluate("seen_val")
    with pytest.raises(ValueError):
        t.evaluate("nowhere")


def test_run_cli(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    code, out, err = crossnav.run_cli(["gen-data", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 0, err
    assert (tmp_path / "dataset.txt").exists()
    code, _, _ = crossnav.run_cli(["no-such-command"])
    assert code != 0
