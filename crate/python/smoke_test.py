"""Smoke test for the gpood extension module.

Build it first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import math
import os
import tempfile

import gpood


def main():
    ind, ood = gpood.synthesize(3, 4, 60, n_ood=40, seed=5)
    assert len(ind) == 180 and len(ood) == 40
    assert ind.class_counts() == [60, 60, 60]
    assert set(ood.labels) == {-1}

    det = gpood.Detector.fit(ind, alpha=0.05, seed=1)
    assert det.num_classes == 3 and det.dim == 4
    assert all(math.isfinite(g) for g in det.gammas)

    r = det.detect(ind.scores[0], ind.features[0])
    assert r.is_ood == (r.score > r.threshold)

    ev = gpood.evaluate(det, ind, ood)
    print(ev)
    assert ev.tnr == 1.0
    assert 0.0 <= ev.tpr <= 1.0
    roc = ev.roc_curve()
    assert roc[0] == (0.0, 0.0) and roc[-1] == (1.0, 1.0)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        det.save(path)
        again = gpood.Detector.load(path)
        assert again.to_json() == det.to_json()
        data = os.path.join(tmp, "ind.csv")
        ind.save(data)
        assert gpood.Dataset.load(data).features == ind.features

    reports = det.bound_check(ood)
    assert not any(b.implied_ood and not b.detector_ood for b in reports)

    assert gpood.kl_score_pair(1.0, 2.0, 1.0, 2.0) == 0.0
    assert gpood.order_statistic_threshold([float(i) for i in range(1, 11)], 0.1) == 9.0
    assert gpood.auroc([0.0, 1.0], [2.0, 3.0]) == 1.0

    try:
        gpood.Detector.load(os.path.join(tempfile.gettempdir(), "missing-model.json"))
    except OSError:
        pass
    else:
        raise AssertionError("loading a missing model should raise OSError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
