# SPDX-License-Identifier: Apache-2.0
import json
import math

import numpy as np
import pytest

import kdkit


def softmax(z, tau=1.0):
    e = np.exp((z - z.max(axis=1, keepdims=True)) / tau)
    return e / e.sum(axis=1, keepdims=True)


def test_kl_matches_direct_sum():
    rng = np.random.default_rng(0)
    zs, zt = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    tau = 2.0
    ps, pt = softmax(zs, tau), softmax(zt, tau)
    expected = tau**2 * np.mean(np.sum(pt * np.log(pt / ps), axis=1))
    assert kdkit.kl_soft_loss(zs, zt, tau) == pytest.approx(expected, rel=1e-10)
    value, grad = kdkit.kl_soft_loss(zs, zt, tau, grad=True)
    assert grad.shape == zs.shape
    assert np.allclose(grad, tau * (ps - pt) / zs.shape[0], atol=1e-12)


def test_bkl_worked_instance():
    pt, ps = np.array([[0.7, 0.2, 0.1]]), np.array([[0.5, 0.3, 0.2]])
    brute = np.sum(pt * np.log(pt / ps) + (1 - pt) * np.log((1 - pt) / (1 - ps)))
    assert kdkit.bkl_loss(np.log(ps), np.log(pt)) == pytest.approx(brute, rel=1e-9)
    assert brute == pytest.approx(0.1447, abs=5e-5)


def test_zero_at_equality_and_breakdowns():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(6, 5))
    labels = [0, 1, 2, 3, 4, 0]
    assert kdkit.dkd_loss(z, z, labels)["total"] < 1e-12
    kd = kdkit.vanilla_kd_loss(z, z, labels, alpha=0.5)
    assert kd["soft"] < 1e-12
    assert kd["total"] == pytest.approx(0.5 * kd["hard"] + 0.5 * kd["soft"])
    dist = kdkit.dist_loss(z, z, labels)
    assert dist["inter"] < 1e-12 and dist["intra"] < 1e-12
    f = rng.normal(size=(6, 3, 4, 4))
    assert kdkit.hint_loss(f, f) < 1e-15
    assert kdkit.cc_loss(f, f) < 1e-15
    assert kdkit.rkd_loss(f, f)["total"] < 1e-12


def test_dkd_decomposition():
    rng = np.random.default_rng(2)
    zs, zt = rng.normal(size=(1, 9)), rng.normal(size=(1, 9))
    parts = kdkit.dkd_loss(zs, zt, [4], 1.0, 1.0)
    pt = softmax(zt)[0, 4]
    assert kdkit.kl_soft_loss(zs, zt) == pytest.approx(parts["tckd"] + (1 - pt) * parts["nckd"], rel=1e-10)


def test_cka():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(200, 8)), rng.normal(size=(200, 5))
    assert kdkit.cka_linear(x, x) == pytest.approx(1.0)
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    assert kdkit.cka_linear(x @ q, y) == pytest.approx(kdkit.cka_linear(x, y), abs=1e-10)
    with pytest.raises(kdkit.KdError) as err:
        kdkit.cka_linear(np.ones((10, 3)), y[:10])
    assert err.value.kind == "CKAUndefined"


def test_recipes_and_jobs():
    assert kdkit.builtin_recipe_names() == ["A1", "A2", "B", "C"]
    a2 = kdkit.builtin_recipe("A2")
    assert a2["optimizer"] == "LAMB" and a2["base_lr"] == 5e-3 and a2["weight_decay"] == 0.03
    job = kdkit.parse_job({"teacher": "resnet56", "student": "resnet20", "recipe": "C"})
    assert job["recipe"]["batch_size"] == 512
    merged = kdkit.merge_overrides(job, {"recipe.epochs": "10", "method": "DKD"})
    assert merged["recipe"]["epochs"] == 10 and merged["method"] == "DKD"
    with pytest.raises(kdkit.KdError) as err:
        kdkit.parse_job(json.dumps({"teacher": "resnet56", "bogus": 1}))
    assert err.value.exit_code == 2


def test_subset_schedule_gap_table():
    labels = [c for c in range(10) for _ in range(20)]
    idx = kdkit.stratified_subset(labels, 10, 0.3, seed=4)
    counts = np.bincount(np.array(labels)[idx], minlength=10)
    assert (counts == 6).all()
    assert idx == kdkit.stratified_subset(labels, 10, 0.3, seed=4)
    assert kdkit.lr_at(0.1, 100, 10, 5) == pytest.approx(0.05)
    assert kdkit.lr_at(0.1, 100, 10, 55) == pytest.approx(0.05 * (1 + math.cos(math.pi * 0.5)))
    csv = kdkit.gap_table_csv([
        {"scale": "cifar100", "pair": "resnet56->resnet20", "method": "KD", "top1": 72.34},
        {"scale": "cifar100", "pair": "resnet56->resnet20", "method": "DIST", "top1": 74.51},
    ])
    header, row = csv.strip().splitlines()
    assert header == "scale,pair,kd_top1,best_other_method,best_other_top1,delta"
    assert row.startswith("cifar100,resnet56->resnet20,72.34,DIST,74.51,-2.17")
