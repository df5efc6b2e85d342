"""Smoke test for the peercollab_py extension module.

Build and install first, for example:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run `python python/smoke_test.py` (or `pytest python/`).
"""

import math
import tempfile
from pathlib import Path

import peercollab_py as pc


def test_coefficient():
    assert pc.coefficient(0.3, 0.3, 30.0) == 0.5
    a, b = pc.coefficient(1.0, 0.2, 5.0), pc.coefficient(0.2, 1.0, 5.0)
    assert abs(a + b - 1.0) < 1e-12


def test_entropy_uniform_histogram():
    # One value per bin gives ln(m).
    w = [[i / 99.0 for i in range(100)]]
    assert abs(pc.entropy(w, bins=100) - math.log(100)) < 1e-12
    assert pc.entropy([[0.5, 0.5]]) == 0.0


def test_cooperation_primitives():
    a = [[0.1, -0.4], [0.9, 0.0]]
    b = [[0.2, 0.3], [-0.5, 0.7]]
    sa, sb, mu = pc.lw_cooperate(a, b, alpha=30.0, criterion="l1")
    assert sa == sb
    assert 0.0 <= mu <= 1.0
    pa, pb = pc.pw_cooperate(a, b, gamma=0.05)
    assert pa[1][1] == 0.7 and pb == b
    pruned = pc.magnitude_prune(a, 0.5)
    assert sum(v == 0.0 for row in pruned for v in row) == 2


def test_metrics():
    assert pc.rank_of_target([0.9, 0.5, 0.5, 0.1], 2) == 3
    assert pc.rank_of_target([0.9, 0.5, 0.7, 0.1], 2, [1, 3, 4]) == 1
    m = pc.metrics_at_n([1, 2, 30], 5)
    assert abs(m["MRR"] - 0.5) < 1e-12
    assert abs(m["HIT"] - 2 / 3) < 1e-12


def test_errors_map_to_value_error():
    for bad in (lambda: pc.entropy([[1.0]], bins=1), lambda: pc.metrics_at_n([0], 5),
                lambda: pc.rank_of_target([0.1], 2), lambda: pc.train("model = 'nope'")):
        try:
            bad()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")


def test_train_and_reload():
    ds = pc.Dataset.synthetic(seed=5, users=200, items=120)
    assert len(ds) == ds.n_users == 200
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        cfg = f"""
model = "bpr"
mode = "pc-lw"
epochs = 3
seed = 7
synthetic_seed = 5
synthetic_users = 200
synthetic_items = 120
out = "{out.as_posix()}"
"""
        res = pc.train(cfg)
        assert res["test"]["MRR@20"] >= res["test"]["MRR@5"]
        assert (out / "summary.json").exists()
        model = pc.TrainedModel.load(str(out))
        before = model.checksum()
        again = model.evaluate(ds, "test")
        assert model.checksum() == before
        assert again["MRR@5"] == res["test"]["MRR@5"]
        assert len(model.scores(ds, 0)) == ds.n_items


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
    print("smoke test passed")
