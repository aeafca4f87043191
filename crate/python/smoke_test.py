#!/usr/bin/env python3
"""Smoke test for the semcert Python extension.

Build the extension first:

    cargo build -p semcert-py --release

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_semcert():
    for profile in ("release", "debug"):
        built = ROOT / "target" / profile / "libsemcert.so"
        if built.exists():
            stage = Path(tempfile.mkdtemp(prefix="semcert-py-"))
            shutil.copy(built, stage / "semcert.so")
            sys.path.insert(0, str(stage))
            import semcert

            return semcert
    sys.exit("libsemcert.so not found; run `cargo build -p semcert-py --release` first")


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    sc = import_semcert()

    # statistics primitives
    approx(sc.normal_cdf(0.0), 0.5)
    approx(sc.normal_quantile(0.9), 1.2815515655, 1e-9)
    for p in (1e-8, 0.137, 0.5, 0.99, 1 - 1e-8):
        approx(sc.normal_cdf(sc.normal_quantile(p)), p, 1e-9)
    approx(sc.pvalue_binom(10, 10, 0.5), 2.0 / 1024.0, 1e-12)
    approx(sc.pvalue_binom(5, 10, 0.5), 1.0, 0.0)
    approx(sc.lower_conf_bound(10, 10, 0.95), 0.05 ** 0.1, 1e-6)
    assert sc.lower_conf_bound(0, 50, 0.999) == 0.0

    # radii
    approx(sc.soft_radius(0.8, 0.2, 1.0), sc.normal_quantile(0.8), 1e-12)
    assert sc.hard_radius(0.4, 1.0) is None
    approx(sc.hard_radius(0.9, 2.0), 2.0 * sc.normal_quantile(0.9), 1e-12)

    # counter-addressable noise
    n1 = sc.sample_noise(1.5, 8, 7, 3)
    n2 = sc.sample_noise(1.5, 8, 7, 3)
    assert n1 == n2 and len(n1) == 8
    assert sc.sample_noise(1.5, 8, 7, 4) != n1

    # domain errors surface as exceptions
    try:
        sc.normal_quantile(1.5)
        raise AssertionError("expected ValueError")
    except ValueError:
        pass

    # tiny end-to-end pipeline
    work = Path(tempfile.mkdtemp(prefix="semcert-smoke-"))
    data = work / "data"
    model_dir = work / "model"
    sc.generate_data(data, seed=11, train_examples=200, test_examples=60)
    summary = sc.train(data, model_dir, seed=11, phase1_epochs=1, epochs=2, margin=4.5)
    assert summary["hinge_violations"] == 0
    assert summary["upper_bound_regime"] is True

    ckpt = Path(summary["checkpoint"])
    model = sc.Model.load(ckpt)
    assert model.sigma == 1.0 and model.classes == 2

    cert = sc.certify(ckpt, data, split="test", t1=10, t2=200, alpha=0.05, seed=11,
                      out_dir=work / "cert")
    assert cert["examples"] == 60
    assert 0.0 <= cert["certified_accuracy"] <= cert["clean_accuracy"] <= 1.0
    assert (work / "cert" / "certification.jsonl").exists()

    atk = sc.attack(ckpt, data, method="greedy", seed=11, limit=30)
    assert atk["examples"] == 30
    assert atk["empirical_robust_accuracy"] >= cert["certified_accuracy"] - 1e-9

    # the model round-trips and encodes deterministically
    probs = model.class_probs(model.encode([0, 1, 2, 3]))
    approx(sum(probs), 1.0, 1e-9)
    resaved = work / "resaved.json"
    model.save(resaved)
    model2 = sc.Model.load(resaved)
    assert model2.encode([0, 1, 2, 3]) == model.encode([0, 1, 2, 3])

    print("smoke test passed")


if __name__ == "__main__":
    main()
