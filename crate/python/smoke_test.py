"""Smoke test for the lrb Python bindings.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/lrb-*.whl
"""

import json
import math

import lrb


def main():
    n, p, sigma = 100, 200, 0.5
    x = lrb.generate_design(n, p, "iid_gaussian", 1)
    assert len(x) == n and len(x[0]) == p
    col0 = sum(row[0] ** 2 for row in x) / n
    assert abs(col0 - 1.0) < 1e-12, col0

    beta0 = [0.0] * p
    for j in range(5):
        beta0[j] = 1.0
    eps = lrb.generate_noise(n, sigma, 2)
    y = [sum(r[j] * beta0[j] for j in range(5)) + e for r, e in zip(x, eps)]

    lam = 2.0 * sigma * math.sqrt(2.0 * math.log(p) / n)
    sol = lrb.solve_lasso(x, y, lam)
    assert sol.certified, sol
    assert sol.kkt_residual < 1e-8
    assert set(sol.support()) <= set(sol.equi_set)

    c = 3.0
    ref = lrb.refine_lasso(x, sol, c)
    assert ref.lambda_r == c * len(sol.equi_set)
    assert ref.h >= lrb.h_lower_bound(lam, c) * (1 - 1e-12)

    # Prediction gap decomposes exactly into H minus the noise interaction.
    gap = lrb.prediction_gap(x, beta0, sol, ref)
    noise = lrb.noise_interaction(x, ref, eps)
    assert abs(gap - (ref.h - noise)) < 1e-9, (gap, ref.h, noise)

    report = json.loads(
        lrb.evaluate_bounds(
            json.dumps(
                {
                    "lambda_l": lam, "c": c, "n": n, "p": p, "sigma": sigma, "p_nonempty": 1.0,
                    "exp_max_t0": 0.05, "sqrt_second_moment": 0.1,
                    "p_not_contained": 0.0, "p_neq_s0": 0.0,
                }
            )
        )
    )
    assert report["full_set_bound"] is not None

    scenario = {
        "id": "smoke",
        "design": {"n": 60, "p": 40, "kind": {"type": "iid_gaussian"}},
        "model": {"sparsity": 3, "magnitude": 1.0},
        "noise": {"kind": "gaussian", "sigma": 0.5},
        "lambda": {"rule": "universal_multiple", "multiple": 2.0},
        "c_values": [3.0],
        "replications": 50,
        "master_seed": 11,
    }
    summary_json, records_json = lrb.run_scenario(json.dumps(scenario))
    summary = json.loads(summary_json)
    assert summary["certified_reps"] == 50
    assert not any(v["verdict"] == "FAIL" for v in summary["verdicts"])
    assert len(json.loads(records_json)) == 50
    again, _ = lrb.run_scenario(json.dumps(scenario))
    assert again == summary_json

    suites = json.loads(lrb.run_verify(["factors"]))
    assert suites[0]["passed"]

    try:
        lrb.solve_lasso(x, y, -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative lambda accepted")

    print(f"lrb smoke test OK: |E|={len(sol.equi_set)}, H={ref.h:.4e}, dmse_hat={summary['per_c'][0]['dmse_hat']:.4e}")


if __name__ == "__main__":
    main()
