"""End-to-end acceptance checks, one per shipped guarantee.

Each test prints a single ``[PASS]``/``[FAIL]`` line (visible with
``pytest -s`` or in captured output on failure) and asserts the stated
tolerance.  Tolerances are contractual: do not loosen them to make a
failing build green.
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

from metainfer.cli import main as cli_main
from metainfer.dataset import filter_outliers, write_csv
from metainfer.metareg import design_matrix, fit_metareg
from metainfer.pooling import uwls
from metainfer.screen import screen_moderators
from metainfer.selection import (
    average_ensemble,
    build_model_space,
    component_bayes_factor,
    fit_ensemble,
    posterior_model_probs,
)
from metainfer.selection.config import EnsembleConfig, SamplerConfig
from metainfer.selection.evidence import (
    log_evidence_bridge,
    log_evidence_quadrature,
)
from metainfer.selection.likelihood import log_likelihood
from metainfer.selection.models import ParameterSpace
from metainfer.selection.sampler import sample_posterior
from metainfer.selection.weights import WeightFunction
from metainfer.simulate import SimConfig, simulate

from .conftest import make_dataset, random_dataset
from .test_likelihood import normalizer_oracle

pytestmark = pytest.mark.acceptance


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_criterion_01_uwls_matches_wls_oracle():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        data = random_dataset(rng)
        assert 5 <= len(data.estimates) <= 50
        pooled = uwls(data)
        # independent route: weighted regression on a constant via lstsq
        sw = 1.0 / data.ses
        X = sw[:, None]
        y = sw * data.thetas
        beta, rss, _, _ = np.linalg.lstsq(X, y, rcond=None)
        mu = float(beta[0])
        sigma2 = float(rss[0]) / (len(y) - 1)
        se = float(np.sqrt(sigma2 / (sw @ sw)))
        worst = max(worst, abs(pooled.mu_hat - mu), abs(pooled.se_naive - se))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 1.0
    _report("criterion 1 (pooling oracle)", ok,
            f"worst abs dev {worst:.2e} (tol 1e-10), {elapsed:.2f}s (cap 1s)")


def test_criterion_02_model_space_and_equal_evidence():
    specs = build_model_space()
    sizes_ok = len(specs) == 20 and all(s.prior_prob == 0.05 for s in specs)
    ev = np.zeros(20)
    probs = posterior_model_probs(specs, ev)
    probs_ok = np.allclose(probs, 0.05, atol=1e-15)
    worst = max(
        abs(component_bayes_factor(specs, ev, comp) - 1.0)
        for comp in ("effect", "heterogeneity", "bias")
    )
    ok = sizes_ok and probs_ok and worst < 1e-9
    _report("criterion 2 (ensemble structure)", ok,
            f"20 models, uniform 0.05 prior, worst |BF-1| {worst:.2e} (tol 1e-9)")


def test_criterion_03_selection_normalizer():
    rng = np.random.default_rng(303)
    by_label = {s.label: s for s in build_model_space()}
    worst = 0.0
    for _ in range(1000):
        spec = by_label["effect_het_weightfn_05" if rng.integers(0, 2) == 0
                        else "effect_het_weightfn_05_10"]
        mu = float(rng.normal(0.0, 0.5))
        tau = float(rng.uniform(0.0, 0.5))
        sigma = float(rng.uniform(0.02, 0.5))
        w2 = float(rng.uniform(0.05, 1.0))
        if len(spec.cutpoints) == 1:
            omegas = (1.0, w2)
        else:
            omegas = (1.0, w2, float(rng.uniform(0.05, 1.0)) * w2)
        want = normalizer_oracle(mu, tau, sigma, spec.cutpoints, omegas)
        got = _normalizer_under_test(spec, mu, tau, sigma, omegas)
        worst = max(worst, abs(got - want))

    # with every interval weight at 1 the selection likelihood must
    # reproduce the unweighted one bit for bit
    data = make_dataset([0.12, -0.4, 0.3, 0.05], [0.1, 0.2, 0.15, 0.3])
    exact = log_likelihood(
        by_label["effect_het_weightfn_05_10"],
        {"mu": 0.07, "tau": 0.2, "omega": (1.0, 1.0, 1.0)}, data,
    ) == log_likelihood(by_label["effect_het_none"],
                        {"mu": 0.07, "tau": 0.2}, data)

    ok = worst < 1e-12 and exact
    _report("criterion 3 (selection normalizer)", ok,
            f"worst |A - oracle| {worst:.2e} (tol 1e-12), "
            f"omega=1 reduction exact: {exact}")


def _normalizer_under_test(spec, mu, tau, sigma, omegas) -> float:
    """Back the normalizer out of a one-observation log-likelihood."""
    theta = 0.1
    data = make_dataset([theta], [sigma])
    ll = log_likelihood(spec, {"mu": mu, "tau": tau, "omega": omegas}, data)
    s = np.sqrt(sigma**2 + tau**2)
    base = stats.norm.logpdf(theta, mu, s)
    p_obs = 2.0 * stats.norm.sf(abs(theta) / sigma)
    kept = omegas[int(np.searchsorted(np.asarray(spec.cutpoints), p_obs,
                                      side="left"))]
    return float(np.exp(base + np.log(kept) - ll))


RECOVERY_TRUTH = {"mu": -0.016, "tau": 0.066, "omega2": 0.739, "omega3": 0.415}


@pytest.mark.slow
def test_criterion_04_parameter_recovery_at_operating_point():
    wf = WeightFunction(cutpoints=(0.05, 0.10),
                        omegas=(1.0, RECOVERY_TRUTH["omega2"], RECOVERY_TRUTH["omega3"]))
    sim = SimConfig(n_studies=100, estimates_per_study=(20, 20),
                    mu=RECOVERY_TRUTH["mu"], tau_within=RECOVERY_TRUTH["tau"],
                    selection=wf)
    data = simulate(sim, seed=4)
    assert len(data.estimates) == 2000
    start = time.perf_counter()
    result = fit_ensemble(data, seed=4)
    averaged = average_ensemble(result)
    elapsed = time.perf_counter() - start

    errs = {name: abs(averaged.mean(name) - truth)
            for name, truth in RECOVERY_TRUTH.items()}
    p_effect = result.component_probability("effect")
    p_bias = result.component_probability("bias")
    ok = (
        errs["mu"] < 0.01 and errs["tau"] < 0.015
        and errs["omega2"] < 0.12 and errs["omega3"] < 0.12
        and p_effect > 0.95 and p_bias > 0.95
        and elapsed <= 600.0
    )
    _report(
        "criterion 4 (recovery at the published operating point)", ok,
        f"|d mu| {errs['mu']:.4f} (tol .01), |d tau| {errs['tau']:.4f} (tol .015), "
        f"|d omega2| {errs['omega2']:.3f}, |d omega3| {errs['omega3']:.3f} (tol .12), "
        f"p_effect {p_effect:.3f}, p_bias {p_bias:.3f} (both > .95), "
        f"{elapsed:.0f}s (cap 600s)",
    )


@pytest.mark.slow
def test_criterion_05_no_bias_specificity():
    config = EnsembleConfig(sampler=SamplerConfig(chains=2, iterations=2000,
                                                  burn_in=500))
    below = 0
    bfs = []
    for rep in range(20):
        sim = SimConfig(n_studies=25, estimates_per_study=(20, 20),
                        mu=0.1, tau_within=0.05, se_range=(0.02, 0.30))
        data = simulate(sim, seed=100 + rep)
        assert len(data.estimates) == 500
        result = fit_ensemble(data, config, seed=100 + rep, compute_draws=False)
        bf = result.component_bayes_factor("bias")
        bfs.append(bf)
        below += bf < 1.0
    ok = below >= 16
    _report("criterion 5 (no-bias specificity)", ok,
            f"BF_bias < 1 in {below}/20 replications (need >= 16); "
            f"median BF {np.median(bfs):.3f}")


@pytest.mark.slow
def test_criterion_06_quadrature_vs_bridge():
    config = EnsembleConfig(sampler=SamplerConfig(chains=2, iterations=2500,
                                                  burn_in=500))
    small = [s for s in build_model_space()
             if 1 <= ParameterSpace(s, config.priors).dim <= 2]
    assert len(small) == 13
    rng = np.random.default_rng(606)
    worst = 0.0
    worst_label = ""
    for d in range(10):
        n = int(rng.integers(20, 41))
        ses = rng.uniform(0.05, 0.4, n)
        thetas = rng.normal(0.05, 0.1, n) + rng.normal(0.0, 1.0, n) * ses
        data = make_dataset(thetas, ses, [f"s{i % 8}" for i in range(n)])
        for spec in small:
            quad = log_evidence_quadrature(spec, data, config, seed=d)
            post = sample_posterior(spec, data, config, seed=d)
            bridge = log_evidence_bridge(post, data, config, seed=d)
            gap = abs(quad.log_evidence - bridge.log_evidence)
            if gap > worst:
                worst, worst_label = gap, f"{spec.label} on dataset {d}"
    ok = worst <= 0.05
    _report("criterion 6 (evidence cross-check)", ok,
            f"worst |quadrature - bridge| {worst:.4f} (tol 0.05) at {worst_label}")


@pytest.mark.slow
def test_criterion_07_reml_recovery():
    tau2_b_true, tau2_w_true = 0.0025, 0.0009
    beta_true = {"intercept": 0.1, "x": 0.3}
    start = time.perf_counter()
    rel_b, rel_w = [], []
    cover = {"intercept": 0, "x": 0}
    for rep in range(50):
        rng = np.random.default_rng(7_000 + rep)
        thetas, ses, studies, xs = [], [], [], []
        for g in range(30):
            u = rng.normal(0.0, np.sqrt(tau2_b_true))
            for _ in range(int(rng.integers(5, 21))):
                x = rng.normal(0.0, 1.0)
                se = rng.uniform(0.02, 0.10)
                mean = beta_true["intercept"] + beta_true["x"] * x \
                    + u + rng.normal(0.0, np.sqrt(tau2_w_true))
                thetas.append(mean + rng.normal(0.0, se))
                ses.append(se)
                studies.append(f"s{g}")
                xs.append(x)
        data = make_dataset(thetas, ses, studies, moderators={"x": xs})
        res = fit_metareg(data, ("x",))
        rel_b.append(abs(res.tau2_between - tau2_b_true) / tau2_b_true)
        rel_w.append(abs(res.tau2_within - tau2_w_true) / tau2_w_true)
        for name in cover:
            row = res.coefficient(name)
            lo = row.estimate - 1.959963984540054 * row.se
            hi = row.estimate + 1.959963984540054 * row.se
            cover[name] += lo <= beta_true[name] <= hi

    # WLS limit on the last replication
    wls = fit_metareg(data, ("x",), fix_tau2_between=0.0, fix_tau2_within=0.0)
    X, _ = design_matrix(data, ("x",))
    w = 1.0 / data.ses**2
    beta_oracle = np.linalg.solve((X * w[:, None]).T @ X, X.T @ (w * data.thetas))
    wls_dev = float(np.max(np.abs(wls.beta - beta_oracle)))
    elapsed = time.perf_counter() - start

    mean_rel_b = float(np.mean(rel_b))
    mean_rel_w = float(np.mean(rel_w))
    ok = (
        mean_rel_b <= 0.30 and mean_rel_w <= 0.30
        and all(45 <= c <= 49 for c in cover.values())
        and wls_dev < 1e-10
        and elapsed <= 120.0
    )
    _report(
        "criterion 7 (REML recovery)", ok,
        f"mean rel err tau2_b {mean_rel_b:.2f}, tau2_w {mean_rel_w:.2f} (cap .30); "
        f"coverage intercept {cover['intercept']}/50, x {cover['x']}/50 "
        f"(need 45-49); WLS dev {wls_dev:.1e} (tol 1e-10); {elapsed:.0f}s (cap 120s)",
    )


@pytest.mark.slow
def test_criterion_08_bma_screen():
    n_true, n_noise = 3, 12
    names = [f"m{j}" for j in range(n_true + n_noise)]
    wins = 0
    for rep in range(25):
        rng = np.random.default_rng(8_000 + rep)
        n = 100
        X = rng.normal(0.0, 1.0, (n, n_true + n_noise))
        ses = rng.uniform(0.05, 0.15, n)
        signal = X[:, :n_true] @ np.full(n_true, 0.06)
        thetas = 0.05 + signal + rng.normal(0.0, 1.0, n) * ses
        data = make_dataset(thetas, ses,
                            moderators={nm: X[:, j] for j, nm in enumerate(names)})
        res = screen_moderators(data, tuple(names))
        if rep == 0:
            count_ok = res.n_models == 2 ** len(names)
            forced = screen_moderators(data, tuple(names[:3]),
                                       forced=(names[3],))
            forced_ok = forced.row(names[3]).pip == 1.0
        true_pips = [res.row(nm).pip for nm in names[:n_true]]
        noise_pips = [res.row(nm).pip for nm in names[n_true:]]
        wins += min(true_pips) > max(noise_pips)
    ok = count_ok and forced_ok and wins >= 20
    _report("criterion 8 (moderator screen)", ok,
            f"2^15 = {2 ** 15} models enumerated: {count_ok}; forced PIP == 1.0: "
            f"{forced_ok}; true-over-noise ordering in {wins}/25 (need >= 20)")


def test_criterion_09_outlier_rule():
    rng = np.random.default_rng(909)
    thetas = list(rng.uniform(0.0, 0.2, 19))
    ses = list(rng.uniform(0.05, 0.15, 19))
    q1, q3 = np.percentile(thetas, [25, 75])
    iqr = q3 - q1
    thetas.append(float(np.median(thetas) + 12.0 * iqr))
    ses.append(0.1)
    data = make_dataset(thetas, ses)
    kept, excluded = filter_outliers(data)
    ok = excluded == ("e20",) and len(kept.estimates) == 19
    _report("criterion 9 (outlier rule)", ok,
            f"point 12 IQRs out excluded: {excluded}")


def test_criterion_10_cli_determinism(tmp_path):
    data_csv = tmp_path / "data.csv"
    rng = np.random.default_rng(1010)
    n = 24
    x = rng.normal(0.0, 1.0, n)
    write_csv(
        make_dataset(0.1 + 0.3 * x + rng.normal(0.0, 0.1, n),
                     rng.uniform(0.05, 0.2, n),
                     [f"s{i % 6}" for i in range(n)],
                     {"x": x}),
        data_csv,
    )
    schema = tmp_path / "schema.json"
    schema.write_text('[{"name": "x", "kind": "continuous"}]')

    commands = {
        "pool": ["pool", "--input", str(data_csv)],
        "funnel": ["funnel", "--input", str(data_csv)],
        "simulate": ["simulate", "--seed", "7"],
        "metareg": ["metareg", "--input", str(data_csv), "--schema", str(schema),
                    "--moderators", "x"],
        "screen": ["screen", "--input", str(data_csv), "--schema", str(schema),
                   "--moderators", "x", "--forced", "se"],
    }
    diffs = []
    for name, argv in commands.items():
        out = tmp_path / name
        assert cli_main(argv + ["--out-dir", str(out), "--seed", "7"]) == 0
        snapshot = {p.name: p.read_bytes() for p in out.iterdir()}
        assert cli_main(argv + ["--out-dir", str(out), "--seed", "7"]) == 0
        for p in sorted(out.iterdir()):
            if p.name == "manifest.json":
                # timestamps are the one sanctioned difference
                first = json.loads(snapshot[p.name])
                second = json.loads(p.read_text())
                for key in ("started_at", "finished_at"):
                    first.pop(key), second.pop(key)
                if first != second:
                    diffs.append(f"{name}/{p.name}")
            elif p.read_bytes() != snapshot[p.name]:
                diffs.append(f"{name}/{p.name}")
    ok = not diffs
    _report("criterion 10 (CLI determinism)", ok,
            "reruns byte-identical (manifest timestamps aside)"
            if ok else f"differing files: {diffs}")
