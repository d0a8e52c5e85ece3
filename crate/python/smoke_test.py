"""Smoke test for the promptsched Python extension.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import json
import math

import promptsched


def main() -> None:
    cfg = promptsched.Config(overrides=["workload.duration_s=300", "cluster.gpus=4"])
    assert cfg.gpus == 4 and cfg.policy == "acs", cfg

    log = promptsched.simulate(cfg)
    assert log.arrivals > 0 and log.completions == log.arrivals
    assert log.loading_time_s == 0.0
    summary = log.summary()
    assert 0.0 < summary.mean_quality <= 1.0
    assert len(log.window_series()) == 5
    assert log.to_json() == promptsched.simulate(cfg).to_json(), "runs must be reproducible"

    ht = promptsched.simulate(cfg.with_overrides(['policy="clipper-ht"', "workload.base_rate_rps=3.0"]))
    assert ht.loading_time_s > 0.0

    counts, fractions, served = promptsched.solve_assignment({0: 0.5, 25: 0.5}, gpus=8, lambda_rps=0.0)
    assert counts[0] == 8 and served == 1.0
    assert math.isclose(sum(fractions.values()), 1.0)

    plan, dq = promptsched.plan_routes({0: 0.5, 25: 0.5}, {0: 0.25, 25: 0.75}, levels=[0, 25])
    assert math.isclose(dq, 0.0375, abs_tol=1e-9), dq
    assert math.isclose(plan[0][25], 0.5, abs_tol=1e-9)

    decision = json.loads(promptsched.decide(cfg, {0: 0.4, 10: 0.3, 25: 0.3}, lambda_rps=1.0))
    assert decision["load_mode"] in ("low", "high")

    err = promptsched.window_prediction_error({0: 0.5, 25: 0.5}, window=1000, levels=[0, 25])
    assert err < 0.05

    try:
        promptsched.Config(overrides=["cluster.gpus=0"])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    print(f"smoke test ok: {summary!r}")


if __name__ == "__main__":
    main()
