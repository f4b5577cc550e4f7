"""Smoke test for the paeff extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or copy
target/<profile>/libpaeff.so to paeff.so somewhere on PYTHONPATH.
"""

import math
import os
import tempfile

import paeff


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    v = [0.3, -0.4, 0.5]
    p = paeff.exp_map_origin(v)
    assert math.hypot(*p) < 1.0
    back = paeff.log_map_origin(p)
    assert all(close(a, b) for a, b in zip(back, v)), back
    x, y = [0.1, 0.2, -0.3], [-0.2, 0.05, 0.4]
    zero = paeff.mobius_add([-a for a in x], x)
    assert all(close(a, 0.0) for a in zero), zero
    assert close(paeff.poincare_distance(x, y), paeff.poincare_distance(y, x), 1e-12)

    eer, _ = paeff.compute_eer([0.9, 0.8, 0.3, 0.1], [True, True, False, False])
    assert eer == 0.0
    assert paeff.compute_auc([0.2, 0.2], [True, False]) == 0.5

    loss = paeff.total_loss(1.0, 2.0, 3.0)
    assert close(loss["total"], 0.3 + 0.7 + 1.05)
    assert paeff.cosine_lr(0, 10) == 2e-5 and paeff.cosine_lr(10, 10) == 0.0

    ds = paeff.Dataset.synth(num_identities=8, samples_per_id=6, face_dim=12, voice_dim=10, seed=1)
    assert len(ds) == 96 and ds.face_dim == 12
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "data.fve")
        ds.save(path)
        assert paeff.Dataset.load(path).to_tsv() == ds.to_tsv()

    split = paeff.Split.random(ds, n_val=2, n_test=3, seed=1)
    model, log = paeff.train(ds, split, epochs=5, lr0=1e-2, proj_dim=8, seed=0)
    assert len(log) == 5 and "val_eer" in log[0]
    face = ds.vectors("face", split.test[0])[0]
    voice = ds.vectors("voice", split.test[0])[1]
    assert math.isfinite(model.score(face, voice))
    report = model.evaluate(ds, split, max_trials=40, matching_trials=20)
    assert report["verification"][0]["stratum"] == "random"
    assert [m["n_c"] for m in report["matching"]] == [2, 4, 6, 8, 10]
    assert model.config()["proj_dim"] == 8

    try:
        paeff.Split.random(ds, n_val=2, n_test=3, mode="sideways")
    except ValueError:
        pass
    else:
        raise AssertionError("bad split mode accepted")
    print(f"paeff {paeff.__version__} smoke test passed")


if __name__ == "__main__":
    main()
