"""Semiparametric shared frailty models fitted by pseudo full likelihood.

Thin wrappers over the compiled core. Results come back as plain dicts with
the same layout as the ``frailty-fit`` JSON output.
"""

from __future__ import annotations

import json
from typing import Any

from ._core import Dataset, Frailty, FrailtyError
from . import _core

__all__ = [
    "Dataset",
    "Frailty",
    "FrailtyError",
    "bootstrap",
    "compare",
    "em_fit",
    "fit",
    "generate",
    "run",
    "simulate",
]


def _config(options: dict[str, Any]) -> str:
    return json.dumps({k: v for k, v in options.items() if v is not None})


def fit(dataset: Dataset, frailty: str = "gamma", **options: Any) -> dict:
    """Pseudo-full-likelihood fit. ``options`` are the flat config keys
    (theta_init, tol_gamma, tol_score, max_iter, jacobian, custom_density, ...)."""
    return json.loads(_core.fit_json(dataset, _config({"frailty": frailty, **options})))


def em_fit(dataset: Dataset) -> dict:
    """Gamma-frailty EM comparator."""
    return json.loads(_core.em_json(dataset))


def compare(dataset: Dataset, **options: Any) -> dict:
    ours = fit(dataset, "gamma", **options)
    em = em_fit(dataset)
    return {
        "pseudo_full": ours,
        "em": em,
        "delta": {
            "beta": [a - b for a, b in zip(ours["beta"], em["beta"])],
            "theta": ours["theta"] - em["theta"],
        },
    }


def bootstrap(dataset: Dataset, B: int, seed: int, estimator: str = "pseudo_full", **options: Any) -> dict:
    return json.loads(_core.bootstrap_json(dataset, _config({"B": B, "seed": seed, "estimator": estimator, **options})))


def generate(seed: int, replicate: int = 0, **design: Any) -> Dataset:
    """One simulated dataset. ``design`` keys: families, family_size, beta,
    theta, censor_mean, censor_sd."""
    return _core.generate(_config({"seed": seed, **design}), replicate)


def simulate(replicates: int, seed: int, **design: Any) -> dict:
    return run("simulate", replicates=replicates, seed=seed, **design)


def run(command: str, **config: Any) -> dict:
    """Runs a ``frailty-fit`` command in-process and returns its JSON output.

    Raises FrailtyError with the tool's error message on a nonzero exit.
    """
    code, out, err = _core.run(_config({"command": command, **config}))
    if code != 0:
        raise FrailtyError(err.strip() or f"{command} exited with {code}")
    return json.loads(out) if out.strip() else {}
