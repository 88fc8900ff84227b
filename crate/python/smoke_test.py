"""Smoke test for the pycssl extension module.

Build and install it first:

    pip install --no-build-isolation -e crates/python
"""

import math
import sys

import numpy as np

import pycssl


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    fam = pycssl.generate_family(d=10, n_datasets=3, seed=7, samples=400)
    check(len(fam["precisions"]) == 3 and len(fam["datasets"][0]) == 400, "generate_family shapes")
    check(all(np.linalg.eigvalsh(np.array(p)).min() > 0 for p in fam["precisions"]), "generated precisions are PD")

    covs = [pycssl.sample_covariance(x) for x in fam["datasets"]]
    hp, s0, s1 = pycssl.Hyperparams.heuristic(covs, alpha=0.3, p="2")
    check(math.isfinite(s0) and s1 > 0 and hp.rho >= 0, f"heuristic {hp!r}")

    fit = pycssl.solve(covs, hp)
    check(fit.converged, repr(fit))
    lams = [np.array(m) for m in fit.lambdas]
    theta = np.array(fit.theta)
    check(all(np.allclose(l, theta + np.array(o)) for l, o in zip(lams, fit.omegas)), "lambda = theta + omega")
    lo, hi = pycssl.eigen_bounds(covs, hp)
    eig = [np.linalg.eigvalsh(l) for l in lams]
    check(all(e.min() >= b - 1e-9 and e.max() <= hi + 1e-9 for e, b in zip(eig, lo)), "eigenvalues within bounds")

    mask, edges = fit.common_structure()
    check(len(mask) == 10 and all(j < k for j, k, _ in edges), f"{len(edges)} common edges")
    m = pycssl.weighted_prf(fit.lambdas, fam["precisions"], 1e-6)
    check(0.0 <= m["f_measure"] <= 1.0, f"weighted F {m['f_measure']:.3f}, F0 {m['f0_measure']:.3f}")
    _, eps = pycssl.extract_common_threshold(fit.lambdas, 0.9)
    check(eps >= 0.0, "threshold extraction")

    pooled = pycssl.solve(covs, pycssl.Hyperparams(0.2, math.inf))
    first = np.array(pooled.lambdas[0])
    check(all(np.allclose(np.array(l), first) for l in pooled.lambdas), "gamma = inf gives identical estimates")

    a = np.eye(2).tolist()
    b = [[1.0, 0.5], [0.5, 1.0]]
    scores = pycssl.anomaly_scores(a, b)
    check(all(abs(s - 1 / 6) < 1e-12 for s in scores), "anomaly score of the bivariate example")
    check(pycssl.roc_auc([0.9, 0.1, 0.5], [True, False, False]) == 1.0, "roc_auc")

    try:
        pycssl.solve(covs, hp, config=pycssl.SolverConfig(max_iter=1), strict=True)
        check(False, "strict solve raises")
    except pycssl.NotConvergedError:
        check(True, "strict solve raises NotConvergedError")
    loose = pycssl.solve(covs, hp, config=pycssl.SolverConfig(max_iter=1))
    check(not loose.converged and loose.iterations == 1, "capped solve returns best iterate")
    try:
        pycssl.Hyperparams(-1.0, 1.0)
        check(False, "negative rho rejected")
    except ValueError:
        check(True, "negative rho rejected")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
