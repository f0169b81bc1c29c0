"""Smoke test for the compiled extension: python python/smoke_test.py"""

import math
import random

import sparse_quantile as sq


def make_data(n=80, p=6, seed=5):
    rng = random.Random(seed)
    x, y = [], []
    for _ in range(n):
        row = [1.0] + [rng.gauss(0.0, 1.0) for _ in range(p - 1)]
        x.append(row)
        y.append(1.0 + 2.0 * row[1] - 1.5 * row[3] + 0.3 * rng.gauss(0.0, 1.0))
    names = ["intercept"] + [f"x{j}" for j in range(1, p)]
    return sq.Dataset(x, y, names)


def main():
    d = make_data()
    assert (d.n, d.p) == (80, 6)
    assert sq.check_loss(-2.0, 0.25) == 1.5

    lam = sq.lambda_from_c(1.0, d)
    fo = sq.fit(d, "l0pqr", 1.0, restarts=5)
    exact = sq.solve_exact(d, lam, d.p)
    enum = sq.solve_enumeration(d, lam, d.p)
    assert exact.converged and exact.support == enum.support
    assert fo.obj_penalized >= exact.obj_penalized - 1e-9
    assert 1 in fo.support and 3 in fo.support, fo

    cqr = sq.fit(d, "l0cqr", 3.0, restarts=5)
    assert len(cqr.support) <= 3
    l1 = sq.fit(d, "l1pqr", 1.0)
    assert len(l1.theta) == d.p

    train = make_data(seed=6)
    cand, best, risks = sq.tune(train, d, "l0cqr", restarts=3)
    assert len(risks) == d.p and len(best.support) == int(cand)

    assert "Binaries" in sq.milp_lp_format(d, lam, 2)

    rows = sq.simulate(["l0pqr", "l1pqr"], reps=2, n_test=200, restarts=3)
    assert [r["method"] for r in rows] == ["l0pqr", "l1pqr"]
    assert all(0.0 <= r["orac_sel"] <= 1.0 for r in rows)

    split = sq.conformal_split(make_data(n=200, seed=9), "l1pqr", alpha=0.1)
    assert 0.0 <= split["coverage"] <= 1.0 and not math.isnan(split["correction"])

    try:
        sq.fit(d, "l0pqr", 1.0, tau=1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("tau outside (0, 1) accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
