"""Smoke test for the tlens extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math

import tlens


def main():
    train, test = tlens.Dataset.synthetic_digits((3, 5), 80, 40, (8, 8), seed=0)
    assert len(train) == 80 and train.dim == 64

    t = tlens.Trainer(
        train, test, hidden=[16, 16], optimizer="adamw", gamma=1e-3,
        batch_size=20, seed=1, telescope=True, smoother=False, test_rows=20,
    )
    t.step(30)
    m = t.metrics()
    assert m["step"] == 30
    assert m["mean_abs_tilde"] < m["mean_abs_lin"] or m["mean_abs_lin"] == 0.0

    s = tlens.Trainer(train, test, hidden=[8], gamma=0.05, batch_size=20, seed=2, smoother=True, test_rows=20)
    s.step(20)
    ms = s.metrics()
    assert ms["invariant_gap"] < 1e-6 and ms["p_train"] > 0.0

    other = tlens.Trainer(train, test, hidden=[16, 16], optimizer="adamw", gamma=1e-3, batch_size=20, seed=1)
    other.step(30)
    scan = tlens.barrier_scan(t, other, test, 5)
    assert abs(scan["barrier"]) < 1e-12, scan

    gbt = tlens.GradientBoosting(n_stages=10, max_depth=3)
    gbt.fit(train)
    norms = gbt.kernel_row_norms(test.inputs)
    lo = 1.0 / math.sqrt(len(train))
    assert all(lo - 1e-12 <= v <= 1.0 + 1e-12 for stage in norms for v in stage)
    ratio = tlens.norm_ratio(norms, gbt.kernel_row_norms(train.inputs))
    assert ratio > 0.0

    print("tlens smoke test ok: ", {k: round(v, 6) for k, v in m.items()})


if __name__ == "__main__":
    main()
