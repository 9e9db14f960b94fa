"""Named verification suites run by ``sensindex verify``.

Each suite returns a list of assertion records
``{"name", "measured", "threshold", "op", "pass"}`` plus optional tidy rows
for plotting.  Sizes default to the documented acceptance settings and can
be overridden from the config's ``suite`` map.
"""

from __future__ import annotations

import time

import numpy as np

from . import harness as hn
from . import martingale as mg
from . import variance as var
from .models import CATALOGUE, MULTI_CATALOGUE, get_model

SUITES = ("doob", "bracket", "clt-sobol", "clt-cvm", "delta", "consistency", "kernels")


def check(name, measured, threshold, op="<"):
    measured = float(measured)
    ops = {"<": lambda: measured < threshold, "<=": lambda: measured <= threshold,
           ">=": lambda: measured >= threshold, "in": lambda: threshold[0] <= measured <= threshold[1]}
    ok = ops[op]()
    return {"name": name, "measured": measured, "threshold": threshold, "op": op, "pass": bool(ok)}


def scalar_catalogue():
    models = [get_model(k) for k in CATALOGUE]
    for k in MULTI_CATALOGUE:
        m = get_model(k)
        models += [m.component(i) for i in range(m.d)]
    return models


def suite_doob(cfg: dict):
    seeds = int(cfg.get("seeds", 100))
    ns = cfg.get("ns", [10, 100, 1000])
    out = []
    for model in scalar_catalogue():
        for n in ns:
            err, gap = 0.0, 0.0
            for s in range(seeds):
                p = mg.build_path(model, n, s)
                err = max(err, p.identity_error())
                gap = max(gap, abs(p.boundary_gap()))
            out.append(check(f"{model.name} n={n} max|Z-A-M|", err, 1e-10 * n))
            out.append(check(f"{model.name} n={n} max|R+QV/2|", gap, mg.REMAINDER_CONSTANT * model.sup_norm ** 2, "<="))
    reps = int(cfg.get("reps", 100_000))
    for name in ("pure_noise", "linear_uniform", "trig_bounded"):
        rep = mg.martingale_property_check(get_model(name), 20, reps, 0, js=[1, 2, 10, 20])
        worst = max(abs(r["mean"]) / r["se"] for r in rep["rows"])
        out.append(check(f"{name} martingale increments |mean|/se", worst, 4.0, "<="))
        out.append(check(f"{name} exact compensator frozen", float(rep["a_exact_frozen"]), 1.0, ">="))
    return out, None


def suite_bracket(cfg: dict):
    n = int(cfg.get("n", 10_000))
    seeds = int(cfg.get("seeds", 50))
    out = []
    for name in cfg.get("models", ["linear_uniform", "trig_bounded"]):
        model = get_model(name)
        acc = np.mean([mg.bracket_path(model, model, n, s)[-1] / n for s in range(seeds)], axis=0)
        ref = var.sigma1(model, model)
        mask = np.abs(ref) > 1e-3
        rel = float(np.max(np.abs(acc - ref)[mask] / np.abs(ref)[mask]))
        out.append(check(f"{name} max rel |<M>_n/n - sigma1|", rel, 0.05))
    return out, None


def _clt(cfg, model_name, estimator, extra_var_check):
    spec = hn.ExperimentSpec(
        model=cfg.get("model", model_name), estimator=estimator, n=int(cfg.get("n", 4000)),
        reps=int(cfg.get("reps", 2000)), seed=int(cfg.get("seed", 0)),
        centering=cfg.get("centering", "delta-corrected"), params=cfg.get("params", {}),
    )
    rep = hn.run_clt_experiment(spec)
    out = [
        check("standardized variance", rep.variance, list(rep.thresholds["variance_band"]), "in"),
        check("KS distance", rep.ks, rep.thresholds["ks_max"]),
        check("|mean z|", abs(rep.mean), rep.thresholds["mean_abs_max"]),
    ]
    if extra_var_check:
        emp = float(spec.n * np.var(rep.estimates, ddof=1))
        out.append(check("|emp var / formula - 1|", abs(emp / rep.sigma2 - 1.0), 0.10))
    out.append({"name": "centering sign", "measured": rep.sign_check["closer"],
                "threshold": "stated", "op": "==", "pass": True,
                "detail": rep.sign_check})
    rows = [("r", "estimate", "z"), *[(r, float(e), float(z)) for r, (e, z) in enumerate(zip(rep.estimates, rep.z))]]
    return out, rows


def suite_clt_sobol(cfg):
    return _clt(cfg, "linear_uniform", "sobol", False)


def suite_clt_cvm(cfg):
    return _clt(cfg, "pure_noise", "cvm", True)


def suite_delta(cfg):
    ns = cfg.get("ns", [100, 1000, 10_000])
    out, rows = [], [("model", "n", "delta", "se", "sqrt_n_delta")]
    for name in cfg.get("models", list(CATALOGUE)):
        st = hn.delta_scaling_study(get_model(name), ns, int(cfg.get("seed", 0)))
        out.append(check(f"{name} sqrt(n) delta at n={ns[-1]}", st["rows"][-1]["sqrt_n_delta"], 0.02))
        out.append(check(f"{name} sqrt(n) delta monotone", float(st["monotone"]), 1.0, ">="))
        rows += [(name, r["n"], r["delta"], r["se"], r["sqrt_n_delta"]) for r in st["rows"]]
    return out, rows


def suite_consistency(cfg):
    ns = cfg.get("ns", [100, 1000, 10_000])
    out, rows = [], [("model", "estimator", "n", "median_abs_error")]
    for name in cfg.get("models", list(CATALOGUE)):
        for est in ("sobol", "cvm"):
            sw = hn.consistency_sweep(get_model(name), est, ns, int(cfg.get("seed", 0)), int(cfg.get("seeds", 50)))
            out.append(check(f"{name} {est} median error at n={ns[-1]}", sw["rows"][-1]["median_abs_error"], sw["threshold"]))
            rows += [(name, est, r["n"], r["median_abs_error"]) for r in sw["rows"]]
    return out, rows


def psd_margin(mat) -> float:
    """Smallest eigenvalue relative to the trace scale (nonnegative means PSD)."""
    mat = np.asarray(mat, dtype=float)
    sym = 0.5 * (mat + mat.T)
    scale = max(float(np.trace(np.abs(sym))), 1e-300)
    return float(np.min(np.linalg.eigvalsh(sym)) / scale)


def suite_kernels(cfg):
    out = []
    g = (np.arange(32) + 0.5) / 32
    t, s = np.meshgrid(g, g, indexing="ij")
    k = var.cvm_kernels(get_model("pure_noise"), t, s)
    m = np.minimum(t, s)
    out.append(check("independence c_xx", np.max(np.abs(k.c_xx - (m + 3 * t * s) * (m - t * s))), 1e-10))
    out.append(check("independence c_xy", np.max(np.abs(k.c_xy - 2 * s * (m - t * s))), 1e-10))
    out.append(check("independence c_yy", np.max(np.abs(k.c_yy - (m - t * s))), 1e-10))
    for model in scalar_catalogue():
        s0, s1 = var.sigma0(model, model), var.sigma1(model, model)
        out.append(check(f"{model.name} sigma0 PSD margin", psd_margin(s0), -1e-9, ">="))
        out.append(check(f"{model.name} sigma1 PSD margin", psd_margin(s1), -1e-9, ">="))
    for name in MULTI_CATALOGUE:
        gm = var.gamma_matrix(var.components(get_model(name)))
        out.append(check(f"{name} gamma PSD margin", psd_margin(gm), -1e-9, ">="))
    pn = get_model("pure_noise")
    a = var.cvm_double_integrals(pn, 256)
    b = var.cvm_double_integrals(pn, 512)
    tot_a, tot_b = 36 * (a[0] + a[1] - 2 * a[2]), 36 * (b[0] + b[1] - 2 * b[2])
    out.append(check("pure_noise CvM variance doubled-grid rel change", abs(tot_a / tot_b - 1), 1e-6))
    return out, None


RUNNERS = {
    "doob": suite_doob, "bracket": suite_bracket, "clt-sobol": suite_clt_sobol,
    "clt-cvm": suite_clt_cvm, "delta": suite_delta, "consistency": suite_consistency,
    "kernels": suite_kernels,
}


def run_suite(name: str, cfg: dict | None = None) -> dict:
    cfg = dict(cfg or {})
    t0 = time.perf_counter()
    assertions, rows = RUNNERS[name](cfg)
    return {
        "suite": name,
        "assertions": assertions,
        "pass": all(a["pass"] for a in assertions),
        "runtime_s": round(time.perf_counter() - t0, 3),
        "rows": rows,
    }
