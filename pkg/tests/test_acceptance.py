"""One test per acceptance criterion, at the stated tolerances.

The terminal summary (see conftest) prints a PASS/FAIL line per criterion.
"""

import json
import time

import numpy as np
import pytest

from gsc import cli
from gsc.analysis import Subclass, bound_rho, rho_chain_holds
from gsc.core import Dataset, Example, History, LinearModel, TargetLabel, sign_pred
from gsc.experiments import (
    EpsilonSweepConfig,
    GeneralizationConfig,
    PPEConfig,
    run_epsilon_sweep,
    run_generalization,
    run_ppe_seeds,
    widest_ia_interval,
)
from gsc.losses import (
    bilinear_hinge_kernel,
    gp_distance,
    gs_hinge_generic,
    gs_hinge_ppe,
    hinge_naive,
    hinge_standard,
    s_hinge_alternate_nl,
    s_hinge_gp,
    strategic_zero_one,
)
from gsc.margins import flipping_cost, strategic_distance_gp, strategic_margin_nl
from gsc.oracles import angle_grid_best_smargin, finite_diff_grad, gp_user_objective, grid_best_response, grid_strategic_distance
from gsc.response import Kind, ResponseSetting, respond_dataset, respond_gp_exact
from gsc.solvers import train_hard

NL = ResponseSetting(Kind.NL)
ETA = NL.crossing_eta


def _report(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def _gp_instance(r, d=2):
    w = r.normal(size=d)
    w *= r.uniform(1.0, 3.0) / np.linalg.norm(w)
    x = r.uniform(-1, 1, size=d)
    x *= r.uniform(0, 5) / np.linalg.norm(x)
    return w, x, int(r.choice([-1, 1]))


@pytest.mark.criterion(1, "closed-form response vs grid oracle")
def test_c01_response_matches_grid_oracle():
    r = np.random.default_rng(101)
    start = time.perf_counter()
    worst = np.inf
    for _ in range(1000):
        w, x, z = _gp_instance(r)
        _, best = grid_best_response(x, w, 0.0, z)
        got = gp_user_objective(x, respond_gp_exact(w, x, z), w, 0.0, z)
        worst = min(worst, got - best)
    elapsed = time.perf_counter() - start
    _report(1, worst >= -0.01 and elapsed < 60, f"min(objective - oracle)={worst:.4g} time={elapsed:.1f}s")
    assert worst >= -0.01
    assert elapsed < 60


@pytest.mark.criterion(2, "lemma: post-response correctness iff shifted score")
def test_c02_lemma_equivalence():
    r = np.random.default_rng(102)
    checked = violations = 0
    while checked < 10_000:
        d = int(r.integers(1, 6))
        w, x = r.normal(size=d), r.normal(size=d) * 3
        y, zt = (int(v) for v in r.choice([-1, 1], size=2))
        shifted = y * (w @ x + 2 * zt * np.linalg.norm(w))
        if abs(shifted) <= 1e-6 or abs(w @ x) <= 1e-6:
            continue
        checked += 1
        lhs = y * (w @ respond_gp_exact(w, x, zt)) > 0
        violations += lhs != (shifted > 0)
    _report(2, violations == 0, f"{violations} violations in {checked}")
    assert violations == 0


@pytest.mark.criterion(3, "strategic distance vs brute force")
def test_c03_strategic_distance_vs_grid():
    r = np.random.default_rng(103)
    worst = 0.0
    for _ in range(500):
        w = r.normal(size=2)
        x = r.uniform(-3, 3, size=2)
        z = int(r.choice([-1, 1]))
        brute = grid_strategic_distance(x, lambda P: sign_pred(respond_gp_exact(w, P, z) @ w))
        worst = max(worst, abs(strategic_distance_gp(w, x, z) - brute))
    _report(3, worst <= 0.02, f"max abs error {worst:.4g}")
    assert worst <= 0.02


@pytest.mark.criterion(4, "strategic 0/1 dominated by s-hinge")
def test_c04_surrogate_domination():
    r = np.random.default_rng(104)
    kinds = (Kind.NL, Kind.SC, Kind.ADV, Kind.GP)
    violations = 0
    for i in range(10_000):
        setting = ResponseSetting(kinds[i % 4])
        model = LinearModel(r.normal(size=2), float(r.normal()))
        ex = Example(r.normal(size=2) * 3, TargetLabel(int(r.choice([-1, 1]))), int(r.choice([-1, 1])))
        loss = gs_hinge_generic(setting, model, ex, gp_distance)
        violations += strategic_zero_one(setting, model, ex) > loss
    _report(4, violations == 0, f"{violations} violations in 10000")
    assert violations == 0


@pytest.mark.criterion(5, "alternate form of the s-hinge under NL")
def test_c05_alternate_form():
    r = np.random.default_rng(105)
    worst = 0.0
    for _ in range(10_000):
        d = int(r.integers(1, 6))
        w, x = r.normal(size=d), r.normal(size=d) * 3
        z, y = (int(v) for v in r.choice([-1, 1], size=2))
        worst = max(worst, abs(s_hinge_gp(w, x, z, y).value - s_hinge_alternate_nl(w, x, z, y, eta=ETA)))
    tol = 1e-6 + 10 * ETA
    _report(5, worst <= tol, f"max abs difference {worst:.3g} (tolerance {tol:.3g})")
    assert worst <= tol


@pytest.mark.criterion(6, "zero maximal margin with in-band misaligned points")
def test_c06_zero_margin():
    r = np.random.default_rng(106)
    pairs, worst = 0, 0.0
    while pairs < 100:
        m = int(r.integers(5, 30))
        X = r.normal(size=(m, 2)) * 3
        y = np.where(r.random(m) < 0.5, 1.0, -1.0)
        zt = np.where(r.random(m) < 0.2, -y, y)
        w = r.normal(size=2)
        misaligned = (sign_pred(X @ w) != zt) & (flipping_cost(w, X) <= 2)
        if not misaligned.any():
            continue
        pairs += 1
        moved = respond_dataset(NL, LinearModel(w), Dataset(X, y, zt))
        worst = max(worst, np.min(np.abs(moved @ w)) / np.linalg.norm(w))
    _report(6, worst <= 1e-6, f"max over pairs of min |w.Delta|/||w|| = {worst:.3g}")
    assert worst <= 1e-6


def _optimal_slack(w, x, y, z):
    # smallest xi >= 0 with y (w.x + 2 z ||w||) >= 1 - xi, found by bisection on feasibility
    feasible = lambda xi: y * (w @ x + 2 * z * np.linalg.norm(w)) >= 1 - xi  # noqa: E731
    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while not feasible(hi):
        lo, hi = hi, 2 * hi
    for _ in range(200):
        mid = (lo + hi) / 2
        lo, hi = (lo, mid) if feasible(mid) else (mid, hi)
    return hi


@pytest.mark.criterion(7, "soft-form slack identity")
def test_c07_slack_identity():
    r = np.random.default_rng(107)
    worst = 0.0
    for _ in range(100):
        m, d = int(r.integers(5, 40)), int(r.integers(1, 5))
        X = r.normal(size=(m, d)) * 3
        y = np.where(r.random(m) < 0.5, 1.0, -1.0)
        z = np.where(r.random(m) < 0.8, y, -y)
        w = r.normal(size=d) * r.uniform(0.1, 3)
        slack = sum(_optimal_slack(w, xi, yi, zi) for xi, yi, zi in zip(X, y, z))
        hinge = sum(s_hinge_gp(w, xi, zi, yi).value for xi, yi, zi in zip(X, y, z))
        worst = max(worst, abs(slack - hinge))
    _report(7, worst <= 1e-9, f"max |slack sum - s-hinge sum| = {worst:.3g}")
    assert worst <= 1e-9


def _separable_nl(r):
    n = int(r.integers(6, 16))
    angle = r.uniform(0, 2 * np.pi)
    u = np.array([np.cos(angle), np.sin(angle)])
    gap = r.uniform(3.0, 6.0)
    X = np.vstack([r.normal(gap * u, 0.8, size=(n, 2)), r.normal(-gap * u, 0.8, size=(n, 2))])
    y = np.r_[np.ones(n), -np.ones(n)]
    zt = np.where(r.random(2 * n) < 0.1, -y, y)
    return Dataset(X, y, zt)


@pytest.mark.criterion(8, "hard solver vs angle-grid oracle")
def test_c08_hard_solver():
    r = np.random.default_rng(108)
    ratios = []
    while len(ratios) < 20:
        ds = _separable_nl(r)
        _, best = angle_grid_best_smargin(ds)
        if best <= 0.05:
            continue
        res = train_hard(ds)
        ratios.append(strategic_margin_nl(res.model, ds) / best)
    worst = min(ratios)
    _report(8, worst >= 0.95, f"min margin ratio {worst:.4f} over 20 datasets")
    assert worst >= 0.95


@pytest.fixture(scope="module")
def generalization():
    out = {}
    for env in ("NL", "ADV", "SC", "SC_HARD"):
        rows, _ = run_generalization(GeneralizationConfig(env=env, n_seeds=30))
        out[env] = {(r["fraction"], r["method"]): r["mean_acc"] for r in rows}
    return out


@pytest.mark.slow
@pytest.mark.criterion(9, "generalization ordering and endpoints")
def test_c09_generalization(generalization):
    problems = []
    for env in ("NL", "ADV", "SC"):
        acc = generalization[env]
        for frac in sorted({f for f, _ in acc}):
            gap = acc[frac, "s-hinge"] - acc[frac, "naive"]
            print(f"  {env} fraction {frac:.1f}: s-hinge {acc[frac, 's-hinge']:.4f} naive {acc[frac, 'naive']:.4f}")
            if gap < 0:
                problems.append(f"{env}@{frac:.1f}: s-hinge below naive by {-gap:.4f}")
        ceiling = acc[1.0, "non-strategic"]
        if acc[1.0, "s-hinge"] < ceiling - 0.02:
            problems.append(f"{env}: s-hinge {acc[1.0, 's-hinge']:.4f} vs ceiling {ceiling:.4f}")
    hard = generalization["SC_HARD"]
    if hard[1.0, "naive"] > hard[1.0, "s-hinge"] - 0.05:
        problems.append(f"SC_HARD: naive {hard[1.0, 'naive']:.4f} vs s-hinge {hard[1.0, 's-hinge']:.4f}")
    _report(9, not problems, "; ".join(problems) or "ordering and endpoints hold")
    assert not problems


@pytest.mark.slow
@pytest.mark.criterion(10, "noise-rate sweep regions")
def test_c10_epsilon_sweep():
    rows = run_epsilon_sweep(EpsilonSweepConfig())
    width = widest_ia_interval(rows)
    low = rows[0]
    for row in rows:
        print(f"  eps {row['epsilon']:.2f}: {row['region']} users_ia_frac {row['users_ia_frac']:.2f}")
    ok = width >= 0.2 and low["epsilon"] == 0 and low["users_ia_frac"] < 0.5 and low["system_ia"]
    _report(10, ok, f"widest IA interval {width:.2f}; at eps=0 region {low['region']}")
    assert width >= 0.2
    assert low["system_ia"] and low["users_ia_frac"] < 0.5


PAPER_PPE_GAINS = {("squared", 12): 0.057, ("squared", 24): 0.064, ("hinge", 12): 0.038, ("logistic", 12): 0.038}


@pytest.mark.slow
@pytest.mark.criterion(11, "PPE gains on synthetic data")
def test_c11_ppe():
    start = time.perf_counter()
    rows, _ = run_ppe_seeds(PPEConfig(), n_seeds=5)
    elapsed = time.perf_counter() - start
    gain = {(r["user_loss"], r["history_size"]): r["gain"] for r in rows}
    sizes = sorted({n for _, n in gain if n >= 4})
    problems = []
    for ul in ("squared", "hinge", "logistic"):
        for n in sizes:
            if gain[ul, n] <= 0:
                problems.append(f"{ul} n={n} gain {gain[ul, n]:+.4f}")
        # diminishing returns: the average per-step increase after n=12 is below that up to n=12
        early = (gain[ul, 12] - gain[ul, 4]) / 8
        late = (gain[ul, 24] - gain[ul, 12]) / 12
        if late >= early:
            problems.append(f"{ul}: no diminishing returns (slope {early:.4f} then {late:.4f})")
    for n in sizes:
        if gain["squared", n] < max(gain["hinge", n], gain["logistic", n]):
            problems.append(f"n={n}: squared users do not gain most")
    if elapsed >= 15 * 60:
        problems.append(f"runtime {elapsed:.0f}s")
    for (ul, n), ref in PAPER_PPE_GAINS.items():
        # reported only: preprocessing behind the reference numbers is unspecified
        print(f"  {ul} n={n}: gain {100 * gain[ul, n]:+.2f} pts (reference {100 * ref:.1f}, "
              f"{'within' if abs(gain[ul, n] - ref) <= 0.03 else 'outside'} 3 pts)")
    _report(11, not problems, "; ".join(problems) or f"properties hold in {elapsed:.0f}s")
    assert not problems


@pytest.mark.criterion(12, "effective radii and ordering chain")
def test_c12_bound_constants():
    got = (bound_rho(Subclass.GSC, 5), bound_rho(Subclass.GP, 5), bound_rho(Subclass.NL, 5, 0.5),
           bound_rho(Subclass.NL, 5, 1.0))
    chain = all(rho_chain_holds(r, e) for r in np.linspace(2, 10, 81) for e in np.linspace(0, 1, 101))
    _report(12, got == (10, 7, 5, 7) and chain, f"rho at r=5: {got}; chain holds: {chain}")
    assert got == (10.0, 7.0, 5.0, 7.0)
    assert chain


def _rel_err(g, ref):
    # absolute floor for gradients that vanish at the evaluation point
    return np.linalg.norm(np.ravel(g) - np.ravel(ref)) / (np.linalg.norm(ref) + 1e-7)


def _fd_linear(loss_fn, r):
    w = r.normal(size=3)
    b = float(r.normal())
    p = np.r_[w, b]
    fd = finite_diff_grad(lambda v: loss_fn(LinearModel(v[:3], v[3])).value, p)
    if fd.has_kink:
        return None
    got = loss_fn(LinearModel(w, b))
    return _rel_err(np.r_[got.grad_w, got.grad_b], fd.grad)


def _fd_bilinear_hinge(r):
    l, d = (int(v) for v in r.integers(1, 5, size=2))
    W = r.normal(size=(l, d))
    x, a, y = r.normal(size=(1, d)), r.normal(size=(1, l)), np.array([float(r.choice([-1, 1]))])
    f = lambda V: float(bilinear_hinge_kernel(V[None], x, a, y)[0][0, 0])  # noqa: E731
    fd = finite_diff_grad(f, W)
    if fd.has_kink:
        return None
    return _rel_err(bilinear_hinge_kernel(W[None], x, a, y)[1][0, 0], fd.grad)


def _fd_ppe(r):
    d, l, n = (int(v) for v in r.integers(1, 5, size=3))
    W = r.normal(size=(l, d))
    x, a = r.normal(size=d), r.normal(size=l)
    hist = History(r.normal(size=(n, l)), r.choice([-1, 1], size=n))
    y = int(r.choice([-1, 1]))
    fd = finite_diff_grad(lambda V: gs_hinge_ppe(V, x, hist, a, y).value, W)
    if fd.has_kink:
        return None
    return _rel_err(gs_hinge_ppe(W, x, hist, a, y).grad_W, fd.grad)


def _example(r, d=3):
    return Example(r.normal(size=d) * 2, TargetLabel(int(r.choice([-1, 1]))), int(r.choice([-1, 1])))


@pytest.mark.criterion(13, "analytic gradients vs finite differences")
def test_c13_gradients():
    r = np.random.default_rng(113)
    kinds = (Kind.NL, Kind.SC, Kind.ADV, Kind.GP)
    checks = {
        "hinge": lambda: (lambda ex: _fd_linear(lambda m: hinge_standard(m, ex.x, ex.y), r))(_example(r)),
        "s-hinge": lambda: (lambda ex: _fd_linear(lambda m: s_hinge_gp(m, ex.x, ex.z.value, ex.y), r))(_example(r)),
        "naive-hinge": lambda: (lambda s, ex: _fd_linear(lambda m: hinge_naive(s, m, ex, temperature=1.0), r))(
            ResponseSetting(kinds[int(r.integers(4))]), _example(r)),
        "bilinear-hinge": lambda: _fd_bilinear_hinge(r),
        "ppe-gs-hinge": lambda: _fd_ppe(r),
    }
    worst = {}
    for name, check in checks.items():
        errs = []
        while len(errs) < 100:
            e = check()
            if e is not None:
                errs.append(e)
        worst[name] = max(errs)
    ok = all(v <= 1e-3 for v in worst.values())
    _report(13, ok, ", ".join(f"{k} {v:.2g}" for k, v in worst.items()))
    assert ok


@pytest.mark.criterion(14, "rerun from sidecar is byte-identical")
def test_c14_determinism(tmp_path, capsys):
    runs = [
        (["experiment-generalization", "--env", "ALL", "--n-seeds", "2", "--epochs", "5", "--lambda", "0.01,1"],
         "generalization_SC.json"),
        (["sweep-epsilon", "--n-seeds", "2", "--epsilon", "0,0.25,0.5", "--epochs", "5", "--lambda", "0.1"],
         "epsilon_sweep.json"),
        (["experiment-ppe", "--synthetic", "--n-seeds", "1", "--epochs", "2", "--lambda", "0.1"], "ppe.json"),
        (["gen-data", "--env", "EPS", "--seed", "4"], "gen-data.json"),
        (["bound", "--r", "3", "--epsilon", "0.2"], "bound.json"),
    ]
    mismatched = []
    for i, (argv, sidecar) in enumerate(runs):
        first, second = tmp_path / f"a{i}", tmp_path / f"b{i}"
        assert cli.main(argv + ["--out", str(first)]) == 0
        assert cli.main([argv[0], "--config", str(first / sidecar), "--out", str(second)]) == 0
        side_a = json.loads((first / sidecar).read_text())
        side_b = json.loads((second / sidecar).read_text())
        assert side_b["options"] == dict(side_a["options"], out=str(second))
        assert side_a["outputs"] == side_b["outputs"]
        assert any(n.endswith(".csv") for n in side_a["outputs"])
        mismatched += [f"{argv[0]}:{n}" for n in side_a["outputs"]
                       if (first / n).read_bytes() != (second / n).read_bytes()]
    capsys.readouterr()
    _report(14, not mismatched, ", ".join(mismatched) or "all outputs identical")
    assert not mismatched
