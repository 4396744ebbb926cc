"""Synthetic count data from structural equation models over a DAG.

Two model families are provided. The log-link family draws
X_j ~ Poisson(exp(theta_j + sum_k theta_jk X_k)) over the parents k of j;
the identity-link family uses rate theta_j + sum_k theta_jk X_k directly
and is only valid while that rate stays positive. Sampling follows the
node ordering cached on the DAG, so relabelling a model and re-sampling
with the same seed yields the correspondingly relabelled data.

Parameter sets whose samples explode past a count cap are discarded and
redrawn, mirroring how such models are kept in a stable regime.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .graphs import Dag

__all__ = [
    "GENERATOR_NAME",
    "CountCapError",
    "NegativeRateError",
    "RegenerationError",
    "PoissonSem",
    "IdentityLinkModel",
    "CountMatrix",
    "make_rng",
    "poisson_variate",
    "random_sem_params",
    "random_identity_params",
    "sample_sem",
    "sample_identity_link",
    "generate_sem_dataset",
    "generate_identity_dataset",
]

# Counter-based generator so independent trials can derive disjoint streams.
GENERATOR_NAME = "numpy-philox4x64"

DEFAULT_COUNT_CAP = 1e9
DEFAULT_RATE_CAP = 1e8

_INT_RE = re.compile(r"[+-]?\d+")


def make_rng(seed) -> np.random.Generator:
    """Seeded Philox generator; `seed` may be an int or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


class CountCapError(RuntimeError):
    """A sampled count (or its rate) exceeded the stability cap."""

    def __init__(self, node: int, value: float, cap: float):
        self.node = node
        super().__init__(
            f"node {node} exploded: value {value:.3g} exceeds cap {cap:.3g}"
        )


class NegativeRateError(RuntimeError):
    """An identity-link rate came out nonpositive."""

    def __init__(self, node: int, rate: float):
        self.node = node
        super().__init__(f"node {node} has nonpositive rate {rate:.6g}")


class UninformativeColumnError(RuntimeError):
    """A sampled dataset contains a column with too few nonzero rows."""

    def __init__(self, node: int, support: int, required: int):
        if support == 0:
            detail = "is identically zero"
        else:
            detail = f"has only {support} nonzero rows (need {required})"
        super().__init__(f"column for node {node} {detail}")
        self.node = node
        self.support = support
        self.required = required


class RegenerationError(RuntimeError):
    """Parameter regeneration failed to find a stable set within budget."""

    def __init__(self, node: int, retries: int, reason: str):
        self.node = node
        super().__init__(
            f"gave up after {retries} parameter regenerations; "
            f"last failure at node {node} ({reason})"
        )


def _check_weights(dag: Dag, theta, weights) -> tuple[tuple, dict]:
    theta = tuple(float(t) for t in theta)
    if len(theta) != dag.p:
        raise ValueError("theta must have one intercept per node")
    w = {(int(j), int(k)): float(v) for (j, k), v in weights.items()}
    if set(w) != set(dag.edges):
        raise ValueError("weights must be given for exactly the DAG edges")
    for e, v in w.items():
        if v == 0.0 or not math.isfinite(v):
            raise ValueError(f"weight for edge {e} must be finite and nonzero")
    return theta, w


@dataclass(frozen=True)
class PoissonSem:
    """Log-link Poisson structural equation model.

    theta[j-1] is the intercept of node j; weights maps each directed edge
    (parent, child) to its nonzero coefficient.
    """

    dag: Dag
    theta: tuple
    weights: dict

    def __post_init__(self):
        theta, w = _check_weights(self.dag, self.theta, self.weights)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weights", w)

    def permute(self, perm) -> "PoissonSem":
        perm = tuple(int(x) for x in perm)
        dag = self.dag.permute(perm)
        theta = [0.0] * self.dag.p
        for j in range(1, self.dag.p + 1):
            theta[perm[j - 1] - 1] = self.theta[j - 1]
        weights = {
            (perm[j - 1], perm[k - 1]): v for (j, k), v in self.weights.items()
        }
        return type(self)(dag, tuple(theta), weights)

    def to_dict(self) -> dict:
        return {
            "dag": self.dag.to_dict(),
            "theta": list(self.theta),
            "weights": [[j, k, v] for (j, k), v in sorted(self.weights.items())],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PoissonSem":
        return cls(
            Dag.from_dict(d["dag"]),
            tuple(d["theta"]),
            {(int(j), int(k)): float(v) for j, k, v in d["weights"]},
        )

    @classmethod
    def from_json(cls, s: str) -> "PoissonSem":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class IdentityLinkModel(PoissonSem):
    """Identity-link variant: node rate is theta_j + sum of weighted parents."""


@dataclass(frozen=True)
class CountMatrix:
    """An n x p matrix of nonnegative integer counts with column labels."""

    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("values must be a 2-d array")
        if not np.issubdtype(v.dtype, np.integer):
            if not np.all(v == np.floor(v)):
                raise ValueError("counts must be integers")
            v = v.astype(np.int64)
        else:
            v = v.astype(np.int64)
        if v.size and v.min() < 0:
            raise ValueError("counts must be nonnegative")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        labels = tuple(self.labels) if self.labels else tuple(
            f"X{j}" for j in range(1, v.shape[1] + 1)
        )
        if len(labels) != v.shape[1]:
            raise ValueError("one label per column required")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.labels) + "\n")
            for row in self.values:
                fh.write(",".join(str(int(x)) for x in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "CountMatrix":
        """Strict reader: a header line then integer cells only.

        Raises ValueError naming the offending data row (1-based, header
        excluded) and column on any malformed cell.
        """
        with open(path) as fh:
            header = fh.readline()
            if not header.strip():
                raise ValueError("empty file or missing header")
            labels = [s.strip() for s in header.rstrip("\n").split(",")]
            rows = []
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                cells = line.rstrip("\n").split(",")
                if len(cells) != len(labels):
                    raise ValueError(
                        f"row {i} has {len(cells)} fields, expected {len(labels)}"
                    )
                parsed = []
                for j, cell in enumerate(cells):
                    s = cell.strip()
                    if not _INT_RE.fullmatch(s):
                        raise ValueError(
                            f"row {i}, column {labels[j]!r}: "
                            f"{s!r} is not an integer"
                        )
                    val = int(s)
                    if val < 0:
                        raise ValueError(
                            f"row {i}, column {labels[j]!r}: negative count {val}"
                        )
                    parsed.append(val)
                rows.append(parsed)
        if not rows:
            raise ValueError("no data rows")
        return cls(np.array(rows, dtype=np.int64), tuple(labels))


def poisson_variate(rate: float, rng: np.random.Generator) -> int:
    """One exact Poisson(rate) draw.

    Inversion by sequential search below rate 10, transformed rejection
    with squeeze above. Deterministic given the generator state.
    """
    if not (rate >= 0) or not math.isfinite(rate):
        raise ValueError(f"rate must be finite and >= 0, got {rate}")
    if rate == 0.0:
        return 0
    if rate < 10.0:
        u = rng.random()
        p = math.exp(-rate)
        s = p
        k = 0
        while u > s and k < 1100:
            k += 1
            p *= rate / k
            s += p
        return k
    # transformed rejection; valid for rate >= 10
    slam = math.sqrt(rate)
    loglam = math.log(rate)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + rate + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (
            math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
            <= k * loglam - rate - math.lgamma(k + 1.0)
        ):
            return int(k)


def _draw_signed_weights(dag, rng, lo, hi):
    weights = {}
    for j, k in sorted(dag.edges):
        mag = rng.uniform(lo, hi)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        weights[(j, k)] = sign * mag
    return weights


def _check_ranges(intercept_range, weight_range):
    ilo, ihi = (float(x) for x in intercept_range)
    wlo, whi = (float(x) for x in weight_range)
    if ilo > ihi:
        raise ValueError(f"bad intercept range ({ilo}, {ihi})")
    if not (0 < wlo <= whi):
        raise ValueError(
            f"weight magnitude range must satisfy 0 < lo <= hi, got ({wlo}, {whi})"
        )
    return (ilo, ihi), (wlo, whi)


def random_sem_params(
    dag: Dag,
    seed,
    intercept_range=(1.0, 3.0),
    weight_range=(0.5, 1.5),
) -> PoissonSem:
    """Draw log-link model parameters.

    Intercepts are uniform on intercept_range; each edge weight has
    magnitude uniform on weight_range (which must exclude zero) and an
    independent random sign.
    """
    (ilo, ihi), (wlo, whi) = _check_ranges(intercept_range, weight_range)
    rng = make_rng(seed)
    theta = tuple(rng.uniform(ilo, ihi) for _ in range(dag.p))
    weights = _draw_signed_weights(dag, rng, wlo, whi)
    return PoissonSem(dag, theta, weights)


def random_identity_params(
    dag: Dag,
    seed,
    intercept_range=(1.0, 10.0),
    weight_range=(0.5, 1.5),
) -> IdentityLinkModel:
    """Draw identity-link model parameters; same scheme, wider intercepts
    so rates have headroom to stay positive under negative weights."""
    (ilo, ihi), (wlo, whi) = _check_ranges(intercept_range, weight_range)
    rng = make_rng(seed)
    theta = tuple(rng.uniform(ilo, ihi) for _ in range(dag.p))
    weights = _draw_signed_weights(dag, rng, wlo, whi)
    return IdentityLinkModel(dag, theta, weights)


def _sample(model, n, seed, count_cap, rate_cap, identity: bool) -> CountMatrix:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = make_rng(seed)
    p = model.dag.p
    x = np.zeros((n, p), dtype=np.int64)
    for node in model.dag.order:
        eta = np.full(n, model.theta[node - 1])
        for par in model.dag.parents(node):
            eta += model.weights[(par, node)] * x[:, par - 1]
        if identity:
            rates = eta
            if rates.min() <= 0.0:
                raise NegativeRateError(node, float(rates.min()))
        else:
            if eta.max() > math.log(rate_cap):
                raise CountCapError(node, float(np.exp(min(eta.max(), 700.0))), rate_cap)
            rates = np.exp(eta)
        if rates.max() > rate_cap:
            raise CountCapError(node, float(rates.max()), rate_cap)
        col = x[:, node - 1]
        for i in range(n):
            val = poisson_variate(float(rates[i]), rng)
            if val > count_cap:
                raise CountCapError(node, float(val), count_cap)
            col[i] = val
    return CountMatrix(x)


def sample_sem(
    sem: PoissonSem,
    n: int,
    seed,
    count_cap: float = DEFAULT_COUNT_CAP,
    rate_cap: float = DEFAULT_RATE_CAP,
) -> CountMatrix:
    """Ancestral sampling of a log-link model.

    Nodes are visited in the DAG's cached order, rows in order within each
    node. Raises CountCapError when a rate or count escapes the caps; the
    caller is expected to redraw parameters and try again.
    """
    return _sample(sem, n, seed, count_cap, rate_cap, identity=False)


def sample_identity_link(
    model: IdentityLinkModel,
    n: int,
    seed,
    count_cap: float = DEFAULT_COUNT_CAP,
    rate_cap: float = DEFAULT_RATE_CAP,
) -> CountMatrix:
    """Ancestral sampling of an identity-link model.

    Raises NegativeRateError as soon as any realised rate is nonpositive;
    cap handling matches sample_sem.
    """
    return _sample(model, n, seed, count_cap, rate_cap, identity=True)


def _generate(
    dag, n, seed, draw_params, sampler, count_cap, rate_cap, max_retries, min_support
):
    if max_retries < 1:
        raise ValueError("max_retries must be >= 1")
    if not 1 <= min_support <= n:
        raise ValueError("min_support must be in [1, n]")
    seq = (
        seed
        if isinstance(seed, np.random.SeedSequence)
        else np.random.SeedSequence(seed)
    )
    last: Exception | None = None
    for attempt in range(max_retries):
        # spawn() advances, so every attempt sees a fresh (params, data) pair
        param_seed, data_seed = seq.spawn(2)
        model = draw_params(param_seed)
        try:
            data = sampler(model, n, data_seed, count_cap, rate_cap)
            # a column that is (nearly) all zero carries no information for
            # any learner; the source ranges are chosen to avoid one, so redraw
            support = (data.values != 0).sum(axis=0)
            thin = np.flatnonzero(support < min_support)
            if thin.size:
                j = int(thin[0])
                raise UninformativeColumnError(j + 1, int(support[j]), min_support)
            return model, data, attempt
        except (CountCapError, NegativeRateError, UninformativeColumnError) as err:
            last = err
    assert last is not None
    raise RegenerationError(getattr(last, "node", 0), max_retries, str(last))


def generate_sem_dataset(
    dag: Dag,
    n: int,
    seed,
    intercept_range=(1.0, 3.0),
    weight_range=(0.5, 1.5),
    count_cap: float = DEFAULT_COUNT_CAP,
    rate_cap: float = DEFAULT_RATE_CAP,
    max_retries: int = 100,
    min_support: int = 1,
):
    """Parameters plus data for a log-link model, redrawing the whole
    parameter set whenever sampling escapes the caps or leaves some
    column with fewer than min_support nonzero rows.

    Returns (model, data, retries_used). Raises RegenerationError naming
    the explosive node once the retry budget is spent.
    """
    return _generate(
        dag,
        n,
        seed,
        lambda s: random_sem_params(dag, s, intercept_range, weight_range),
        sample_sem,
        count_cap,
        rate_cap,
        max_retries,
        min_support,
    )


def generate_identity_dataset(
    dag: Dag,
    n: int,
    seed,
    intercept_range=(1.0, 10.0),
    weight_range=(0.5, 1.5),
    count_cap: float = DEFAULT_COUNT_CAP,
    rate_cap: float = DEFAULT_RATE_CAP,
    max_retries: int = 100,
    min_support: int = 1,
):
    """Identity-link analogue of generate_sem_dataset; nonpositive rates
    also trigger a redraw."""
    return _generate(
        dag,
        n,
        seed,
        lambda s: random_identity_params(dag, s, intercept_range, weight_range),
        sample_identity_link,
        count_cap,
        rate_cap,
        max_retries,
        min_support,
    )
