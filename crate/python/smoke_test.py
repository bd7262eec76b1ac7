#!/usr/bin/env python3
"""Build the sigma_lab_py extension with cargo and exercise its surface.

Run from anywhere: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_module():
    subprocess.run(["cargo", "build", "-p", "sigma-lab-py"], cwd=ROOT, check=True)
    built = ROOT / "target" / "debug" / "libsigma_lab_py.so"
    if not built.exists():
        sys.exit(f"missing {built}; did the build target change?")
    stage = Path(tempfile.mkdtemp(prefix="sigma_lab_py_"))
    shutil.copy2(built, stage / "sigma_lab_py.so")
    sys.path.insert(0, str(stage))
    import sigma_lab_py

    return sigma_lab_py


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def check_scalar_losses(m):
    assert close(m.exact_nll(2.0, 1.0, 1.0), 0.1269280110429725)
    assert close(m.bce(10.0, 1.0), 4.5398899216864647e-5)
    assert close(m.surrogate_loss(3.0, 0.0, 2.0), 1.8607591265615452)
    # unit sigma: surrogate = bce + ln 2, and it collapses to the exact nll
    f, y = -1.3, 1.0
    assert close(m.surrogate_loss(f, y, 1.0), m.bce(f, y) + math.log(2.0))
    assert close(m.exact_nll(f, y, 1.0), m.bce(f, y))

    h = 1e-6
    gf, gs = m.surrogate_grad(0.7, 1.0, 1.4)
    fd_f = (m.surrogate_loss(0.7 + h, 1.0, 1.4) - m.surrogate_loss(0.7 - h, 1.0, 1.4)) / (2 * h)
    fd_s = (m.surrogate_loss(0.7, 1.0, 1.4 + h) - m.surrogate_loss(0.7, 1.0, 1.4 - h)) / (2 * h)
    assert abs(gf - fd_f) < 1e-8 and abs(gs - fd_s) < 1e-8

    for kind in ("bce", "sce", "bootstrap", "rho_dc"):
        loss, grad = m.baseline_loss(kind, 0.4, 1.0)
        assert math.isfinite(loss) and math.isfinite(grad)
    # rho = 0 is the identity correction
    assert m.baseline_loss("rho_dc", 0.4, 1.0, rho=0.0) == m.baseline_loss("bce", 0.4, 1.0)
    try:
        m.baseline_loss("nonsense", 0.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("bad baseline kind was accepted")


def check_objective(m):
    logits = [[0.5, -1.0], [2.0, 0.0]]
    targets = [[1.0, 0.0], [0.0, 1.0]]
    value, grad_logits, grad_free = m.objective(logits, targets, [1.0, 1.0])
    plain = sum(m.bce(f, y) for row_f, row_y in zip(logits, targets) for f, y in zip(row_f, row_y))
    assert close(value, plain / 2 + 2 * math.log(2.0))
    assert len(grad_logits) == 2 and len(grad_logits[0]) == 2 and len(grad_free) == 2


def check_corruption(m):
    # one dominant positive per row, ten rows per class
    targets = [[1.0 if c == k else 0.0 for c in range(4)] for k in range(4) for _ in range(10)]
    out = m.corrupt(targets, "san", 0.5, seed=99)
    assert out["per_class_eligible"] == [10, 10, 10, 10]
    assert out["per_class_counts"] == [5, 5, 5, 5]
    assert len(out["records"]) == 20
    flipped = sum(
        1
        for old_row, new_row in zip(targets, out["targets"])
        for old, new in zip(old_row, new_row)
        if old != new
    )
    assert flipped == 20  # additive noise only ever sets extra positives
    rec = out["records"][0]
    assert set(rec) == {"sample_id", "kind", "class_from", "class_to", "old", "new"}

    soft = m.corrupt(targets, "sln", 0.2, seed=7, soft_value=0.6)
    changed = {
        new
        for old_row, new_row in zip(targets, soft["targets"])
        for old, new in zip(old_row, new_row)
        if old != new
    }
    assert changed == {0.6}


def check_metrics(m):
    ap = m.average_precision([0.9, 0.8, 0.7, 0.6], [True, False, True, False])
    assert close(ap, 5.0 / 6.0)
    assert m.average_precision([0.1, 0.2], [False, False]) is None
    assert close(m.roc_auc([0.9, 0.1], [True, False]), 1.0)

    report = m.evaluate([[0.9, 0.2], [0.1, 0.8]], [[1.0, 0.0], [0.0, 1.0]])
    assert close(report["map"], 1.0) and close(report["exact_match_acc"], 1.0)
    assert report["n_samples"] == 2 and len(report["per_class_ap"]) == 2


def check_training(m):
    data = m.generate(4, 8, 20, 5, 5, noise_scale=0.3, cooccurrence_prob=0.0, seed=11)
    assert len(data["train"]["features"]) == 80 and len(data["train"]["features"][0]) == 8
    args = (
        data["train"]["features"],
        data["train"]["targets"],
        data["valid"]["features"],
        data["valid"]["targets"],
        data["test"]["features"],
        data["test"]["targets"],
    )
    kw = dict(loss="sigma", learning_rate=5e-3, batch_size=16, max_epochs=15,
              patience=5, warmup_epochs=5, seed=3)
    run = m.train(*args, **kw)
    assert run["loss"] == "sigma"
    assert 1 <= run["best_epoch"] <= run["stopped_epoch"] <= 15
    assert len(run["train_loss"]) == len(run["valid_map"]) == len(run["sigma_trajectory"])
    assert len(run["final_sigmas"]) == 4 and all(s > 0 for s in run["final_sigmas"])
    assert 0.0 <= run["test"]["map"] <= 1.0

    rerun = m.train(*args, **kw)
    assert rerun["valid_map"] == run["valid_map"]
    assert rerun["final_sigmas"] == run["final_sigmas"]

    base = m.train(*args, **{**kw, "loss": "bce"})
    assert base["loss"] == "bce"
    assert all(s == 1.0 for s in base["final_sigmas"])


def main():
    m = load_module()
    check_scalar_losses(m)
    check_objective(m)
    check_corruption(m)
    check_metrics(m)
    check_training(m)
    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
