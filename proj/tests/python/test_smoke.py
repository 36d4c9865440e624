import math

import pytest

import scalevec as sv


def test_sphere_normalize():
    y = sv.sphere_normalize([3.0, 4.0])
    assert math.isclose(sum(v * v for v in y), 2.0, rel_tol=1e-15)
    with pytest.raises(sv.ScalevecError, match="ZeroVector"):
        sv.sphere_normalize([0.0, 0.0])


def test_thm1_ordering():
    t = sv.random_unit_teacher(2, 3, seed=1)
    r = sv.run_thm1(t, horizon=1.0, steps=500)
    assert r["passed"]
    assert all(v <= b for v, b in zip(r["loss_variant"][1:], r["loss_baseline"][1:]))
    assert math.isclose(r["loss_baseline"][0], 0.5, rel_tol=1e-12)


def test_thm4_on_balanced_teacher():
    r = sv.run_thm4(sv.balanced_teacher(3, 4, seed=2), horizon=2.0, steps=2000)
    assert r["passed"], [c for c in r["checks"] if not c["passed"]]


def test_sharpness_worked_example():
    s = sv.hessian_sharpness([0, 0], [1, 1], [1, 1])
    assert s["trace"] == 2.0
    assert round(s["lambda_max"], 7) == 1.6180340
    assert round(s["frob"], 7) == 2.4494897


def test_sde_path_and_bound():
    p = sv.euler_maruyama(horizon=1.0, seed=3)
    assert len(p["times"]) == len(p["w"]) == len(p["gamma"])
    assert not p["diverged"]
    assert sv.gronwall_bound(0.1, 4, 0.01, 1.0, 0.0, 4.0) == 4.0


def test_descent_expansion_runs():
    e = sv.sgd_descent_expansion([0.3, -0.2], [1.1, 0.9], [0.5, 0.5], 1e-2, n_mc=10000, seed=1)
    assert e["stderr"] > 0.0
    assert abs(e["residual"]) < 1e-3


def test_block_and_counts():
    x = [[0.1 * (i + j) for j in range(8)] for i in range(3)]
    y1 = sv.block_forward("standard", x, n_head=2, d_ffn=12, seed=4)
    y2 = sv.block_forward("hg+or", x, n_head=2, d_ffn=12, seed=4)
    assert max(abs(a - b) for r1, r2 in zip(y1, y2) for a, b in zip(r1, r2)) < 1e-12
    errs = sv.block_gradient_check("hg+dnp+er", seed=5)
    assert max(errs.values()) < 1e-5
    count, ratio = sv.count_params(22, 1792, total=1_028_065_024)
    assert count == 80_640
    assert f"{ratio:.3g}" == "7.84e-05"
    roles = sv.classify_norms("standard", "gemma")
    assert {n for n, role, _ in roles if role == "output"} == {"q_norm", "k_norm", "attn_post_norm", "ffn_post_norm"}


def test_run_config(tmp_path):
    status, results = sv.run_config("experiment = dp\ndp.horizon = 1\ndp.steps = 1000\n", out_dir=str(tmp_path))
    assert status == 0
    assert results[0]["experiment"] == "dp"
    assert (tmp_path / "comparison.csv").read_text().startswith("experiment,t,loss_baseline,loss_variant,gap\n")
    with pytest.raises(sv.ScalevecError, match="ConfigError"):
        sv.run_config("experiment = nope\n")
    assert "wd-sde" in sv.experiments()
