#!/usr/bin/env python3
"""Generate the shared KGE fixture file used for cross-language parity checks.

Each case stores a simulated/observed pair (optionally masked) together
with the scores the reference implementation produced for it.  Any other
implementation of the efficiency metrics must reproduce the stored
values to within 1e-9; the reference implementation itself is held to
1e-12 by the acceptance suite.

Usage:
    python3 scripts/make_kge_fixtures.py [--out fixtures/kge_fixtures.json]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from mcrr import metrics

SEED = 20240815
N_RANDOM_CASES = 60


def build_cases(rng: np.random.Generator) -> list[dict]:
    cases = []

    def add(name, sim, obs, mask=None):
        sim = np.asarray(sim, dtype=float)
        obs = np.asarray(obs, dtype=float)
        rep = metrics.kge(sim, obs, mask)
        err = metrics.rmse(sim, obs, mask)
        cases.append({
            "name": name,
            "sim": sim.tolist(),
            "obs": obs.tolist(),
            "mask": None if mask is None else np.asarray(mask, bool).tolist(),
            "n": rep.n,
            "kge": rep.kge,
            "kge_ss": rep.kge_ss,
            "r": rep.r,
            "alpha": rep.alpha,
            "beta": rep.beta,
            "rmse": err,
        })

    obs = rng.gamma(2.0, 2.0, 120) + 0.05
    add("perfect_fit", obs.copy(), obs)
    add("doubled_flow", 2.0 * obs, obs)
    add("mean_predictor", np.full_like(obs, obs.mean()), obs)
    add("constant_sim", np.full_like(obs, 3.25), obs)
    add("tiny_pair", [1.0, 2.0], [2.0, 1.0])
    mask = np.ones(120, dtype=bool)
    mask[::3] = False
    add("masked_thirds", obs * rng.uniform(0.5, 1.5, 120), obs, mask)

    for i in range(N_RANDOM_CASES):
        n = int(rng.integers(2, 400))
        obs = rng.gamma(2.0, 2.0, n) + 0.01
        sim = np.abs(obs * rng.uniform(0.2, 1.8) + rng.normal(0.0, 1.0, n))
        mask = None
        if i % 4 == 0 and n > 10:
            mask = rng.random(n) < 0.8
            if mask.sum() < 2:
                mask[:2] = True
        add(f"random_{i:03d}", sim, obs, mask)
    return cases


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="fixtures/kge_fixtures.json")
    args = parser.parse_args()

    rng = np.random.default_rng(SEED)
    payload = {
        "version": 1,
        "generator": "scripts/make_kge_fixtures.py",
        "seed": SEED,
        "tolerance_reference": 1e-12,
        "tolerance_cross_language": 1e-9,
        "cases": build_cases(rng),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"wrote {out} ({len(payload['cases'])} cases)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
