import math

import numpy as np
import pytest

import xtkd

TINY = """\
[experiment]
name = tiny
seeds = 0, 1
epochs = 30
record_every = 10
[data]
pool = 40
train = 20
val = 20
[student]
widths = 8, 4
cut = 1
[teacher]
kind = random-frozen
widths = 12
cut = 1
[distill]
method = fitnets
direction = inverted, traditional
"""


def test_version():
    assert xtkd.__version__.count(".") == 2


def test_svd_matches_numpy():
    rng = np.random.default_rng(0)
    for shape in [(5, 3), (3, 5), (7, 7), (1, 4)]:
        a = rng.uniform(-1, 1, shape)
        u, sigma, v = xtkd.svd(a)
        np.testing.assert_allclose(sigma, np.linalg.svd(a, compute_uv=False), atol=1e-12)
        np.testing.assert_allclose(u @ np.diag(sigma) @ v.T, a, atol=1e-12)


def test_effective_rank():
    assert xtkd.effective_rank([1.0, 1e-9], 1e-6) == 1
    assert xtkd.effective_rank([5.0, 5.0, 5.0], 1e-6) == 3


def test_losses_against_numpy():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    assert xtkd.fitnets_loss(a, b) == pytest.approx(np.mean((a - b) ** 2), abs=1e-14)
    assert xtkd.fitnets_loss(a, a) == 0.0
    assert xtkd.at_loss(a, a) == 0.0
    assert xtkd.pkt_loss(a, b) >= 0.0
    assert xtkd.silog_loss(np.array([[math.exp(0.5)]]), np.array([[1.0]])) == pytest.approx(5.361903, abs=1e-6)
    assert xtkd.ce_loss(np.zeros((3, 5)), [0, 2, 4]) == pytest.approx(math.log(5), abs=1e-12)


def test_depth_metrics():
    m = xtkd.depth_metrics(np.array([[2.0, 4.0]]), np.array([[1.0, 4.0]]))
    assert m["abs_rel"] == pytest.approx(0.5)
    assert m["delta1"] == 0.5
    assert m["delta3"] == 0.5


def test_spectral_tail_is_trailing_singular_mass():
    z = np.diag([3.0, 2.0, 1.0])
    assert xtkd.spectral_reg_loss(z, 2) == pytest.approx(math.sqrt(5.0), abs=1e-12)
    assert xtkd.spectral_reg_loss(z, 1) == pytest.approx(math.sqrt(14.0), abs=1e-12)


def test_decoupled_bound_holds():
    rng = np.random.default_rng(2)
    zs, zt, p = rng.normal(size=(8, 6)), rng.normal(size=(8, 10)), rng.normal(size=(10, 6))
    b = xtkd.decoupled_bound(zs, zt, p)
    assert b["holds"]
    assert b["slack"] == pytest.approx(b["kt"] + b["reg"] - b["lhs"])


def test_errors_map_to_python():
    with pytest.raises(xtkd.ShapeError):
        xtkd.fitnets_loss(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(xtkd.ConfigError):
        xtkd.preset_config("no-such-preset")


def test_synth_gen_is_deterministic():
    a = xtkd.synth_gen(3, 50)
    b = xtkd.synth_gen(3, 50)
    np.testing.assert_array_equal(a["x"], b["x"])
    assert a["x"].shape == (50, 16)
    assert (a["y_depth"] > 0).all()


def test_grad_audit_passes():
    for name, err, threshold, ok in xtkd.grad_audit(2):
        assert ok, (name, err, threshold)


def test_presets_render():
    assert "table1-grid" in xtkd.preset_names()
    assert "[experiment]" in xtkd.preset_config("table1-grid")


def test_run_config(tmp_path):
    out = xtkd.run_config(TINY, tmp_path / "a")
    labels = [r["label"] for r in out["summary"]]
    assert "baseline" in labels
    inv = next(r for r in out["summary"] if r["label"] == "random-frozen/fitnets/inverted")
    assert inv["n_seeds"] == 2
    assert inv["inv_minus_trad"] is not None
    again = xtkd.run_config(TINY, tmp_path / "b")
    for f, g in zip(out["files"], again["files"]):
        assert f.read_bytes() == g.read_bytes()
