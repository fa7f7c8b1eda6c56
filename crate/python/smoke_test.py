"""Smoke test for the `lnm` extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import math

import lnm


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    ds = lnm.make_blobs(3, 50, 4, spread=1.0, center_box=3.0, seed=1)
    assert (ds.n, ds.d, ds.k) == (150, 4, 3)
    assert ds.class_counts() == [50, 50, 50]
    split = ds.stratified_split(seed=2)
    assert split.splits.count("val") == 15

    t = lnm.symmetric_matrix(0.4, 3)
    assert all(close(sum(row), 1.0) for row in t)
    noisy = lnm.apply_matrix(ds.clean_labels, t, seed=3)
    assert 0.25 < noisy.realized_rate < 0.55

    ref = lnm.Model([4, 8, 3], seed=4)
    idn = lnm.idn_noise(ds.features, ds.clean_labels, ref, 1.0, std=0.0, seed=5)
    assert all(o != c for o, c in zip(idn.observed_labels, ds.clean_labels))

    probs = lnm.softmax([[0.0, 0.0], [1.0, 1.0]])
    assert probs == [[0.5, 0.5], [0.5, 0.5]]
    assert close(lnm.cross_entropy(probs, [0, 1])[0], math.log(2))
    assert ref.grad_check([[0.1, -0.2, 0.3, 0.4]], [1], loss="sce") < 1e-6

    assert lnm.small_loss_select([0.3, 0.1, 0.2, 0.9], 0.5) == [1, 2]
    thresholds = lnm.class_thresholds([10, 1000], head=0.9, tail=0.5)
    assert close(thresholds[0], 0.9) and abs(thresholds[1] - 0.5) < 1e-9
    assert lnm.coverage_ratio([0, 1], [True, True, True, False]) == 2 / 3

    # the selected epoch is a 0-based index
    b, v, last, epoch = lnm.bvl([(0.5, 0.6), (0.9, 0.7), (0.4, 0.8)], window=2)
    assert (b, v, epoch) == (0.8, 0.7, 1) and close(last, 0.75)
    methods, overall = lnm.rank_methods(
        {("ce", "sym", "20"): 0.7, ("sce", "sym", "20"): 0.8}
    )
    assert dict(zip(methods, overall)) == {"ce": 2.0, "sce": 1.0}

    config = """
epochs = 5
seeds = [1]

[dataset.blobs]
classes = 3
per_class = 60
dim = 4
spread = 1.0
center_box = 2.0

[noise]
kind = "symmetric"
rate = 0.2

[method]
kind = "coteaching"

[train]
hidden = [16]
batch_size = 16
"""
    run = lnm.run_experiment(config, overrides=["method.kind=\"ce\""])
    assert len(run.curve) == 5 and run.best >= run.last
    summary = json.loads(run.summary_json())
    assert summary["method"] == "ce" and summary["ok"]

    try:
        lnm.symmetric_matrix(1.5, 3)
    except ValueError:
        pass
    else:
        raise AssertionError("rate 1.5 accepted")
    print("lnm smoke test passed:", run.run_id, f"B={run.best:.3f} L={run.last:.3f}")


if __name__ == "__main__":
    main()
