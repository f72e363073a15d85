"""Monte Carlo level and power studies with seeded, schedule-free replications.

Seeding: replication ``r`` of the ``i``-th sample size draws its data from
substream ``(seed, i, r, 0)`` and its bootstrap from ``(seed, i, r, 1, b)``.
Every scheme in a study sees the same data and bootstrap streams, so the
scheme comparison uses common random numbers. Results never depend on the
number of workers or the order in which replications finish.

The mixture alternative is ``1/2 N(-mu e1, I) + 1/2 N(+mu e1, I)``. Placing
both components at ``+mu e1`` would keep the data Gaussian, and then no
alternative would exist.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import SCHEMES, substream
from .estimation import EstimatorSpec
from .kernel import KernelConfig
from .model import GaussianFamily, GaussianTheta
from .testing import run_test

CSV_FIELDS = ("study", "scheme", "d", "n", "mu", "c", "B", "gamma", "R", "rejections", "rate", "se",
              "seconds_per_rep")


def gen_null(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from ``N(0, I_d)``."""
    return GaussianFamily(d).sample(GaussianTheta.standard(d), n, rng)


def gen_mixture(d: int, n: int, mu: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from the symmetric mixture ``1/2 N(-mu e1, I_d) + 1/2 N(mu e1, I_d)``."""
    if mu < 0 or not math.isfinite(mu):
        raise ValueError(f"mu must be a finite non-negative number, got {mu}")
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    X = rng.standard_normal((n, d))
    X[:, 0] += sign * mu
    return X


@dataclass(frozen=True)
class StudyConfig:
    study: str
    d: int
    n: tuple
    reps: int
    B: int = 200
    gamma: float = 0.05
    c: float = 0.2
    mu: float = 0.0
    schemes: tuple = ("corrected",)
    estimator: str = "moment"
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in np.atleast_1d(self.n)))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if self.study not in ("null", "power"):
            raise ValueError(f"study must be 'null' or 'power', got {self.study!r}")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if not self.n or min(self.n) < 2:
            raise ValueError(f"every n must be at least 2, got {self.n}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if self.study == "null" and self.mu != 0:
            raise ValueError("a null study has mu = 0")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; choose from {SCHEMES}")
        EstimatorSpec(kind=self.estimator)
        KernelConfig(self.c, self.d)


@dataclass
class CellResult:
    study: str
    scheme: str
    d: int
    n: int
    mu: float
    c: float
    B: int
    gamma: float
    R: int
    rejections: int | None
    seconds_per_rep: float
    error: str | None = None

    @property
    def rate(self) -> float:
        return float("nan") if self.rejections is None else self.rejections / self.R

    @property
    def se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1 - r) / self.R)


@dataclass
class StudyResult:
    config: StudyConfig
    cells: list = field(default_factory=list)

    def cell(self, scheme: str, n: int) -> CellResult:
        for c in self.cells:
            if c.scheme == scheme and c.n == n:
                return c
        raise KeyError((scheme, n))

    def to_csv(self, timing: bool = False) -> str:
        """CSV text; ``seconds_per_rep`` stays empty unless ``timing`` so output is reproducible."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c in self.cells:
            ok = c.rejections is not None
            w.writerow([
                c.study, c.scheme, c.d, c.n, repr(float(c.mu)), repr(float(c.c)), c.B, repr(float(c.gamma)),
                c.R, c.rejections if ok else "", repr(c.rate) if ok else "", repr(c.se) if ok else "",
                f"{c.seconds_per_rep:.6f}" if timing else "",
            ])
        return buf.getvalue()


def _replicate(cfg: StudyConfig, ni: int, rep: int):
    """One replication for every scheme; returns (ni, rep, {scheme: reject or error}, seconds)."""
    t0 = time.perf_counter()
    n = cfg.n[ni]
    rng = substream(cfg.seed, ni, rep, 0)
    X = gen_null(cfg.d, n, rng) if cfg.study == "null" else gen_mixture(cfg.d, n, cfg.mu, rng)
    kcfg = KernelConfig(cfg.c, cfg.d)
    est = EstimatorSpec(kind=cfg.estimator)
    out = {}
    for scheme in cfg.schemes:
        try:
            res = run_test(X, kcfg, est, B=cfg.B, gamma=cfg.gamma, seed=(cfg.seed, ni, rep, 1), scheme=scheme)
            out[scheme] = res.reject
        except Exception as exc:  # recorded per cell, see run_study
            out[scheme] = f"{type(exc).__name__}: {exc}"
    return ni, rep, out, time.perf_counter() - t0


def _replicate_star(args):
    return _replicate(*args)


def run_study(cfg: StudyConfig, workers: int | None = 1) -> StudyResult:
    """Run every (n, scheme) cell; ``workers=None`` uses every core.

    A hard error in any replication voids that cell's counts and records
    the first error message; other cells are unaffected.
    """
    jobs = [(cfg, ni, rep) for ni in range(len(cfg.n)) for rep in range(cfg.reps)]
    workers = (os.cpu_count() or 1) if workers is None else int(workers)
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    if workers == 1:
        results = [_replicate(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_star, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    counts = {(ni, s): 0 for ni in range(len(cfg.n)) for s in cfg.schemes}
    errors = {}
    seconds = {ni: 0.0 for ni in range(len(cfg.n))}
    for ni, _, out, sec in results:
        seconds[ni] += sec
        for s, v in out.items():
            if isinstance(v, str):
                errors.setdefault((ni, s), v)
            elif v:
                counts[(ni, s)] += 1
    res = StudyResult(config=cfg)
    for ni, n in enumerate(cfg.n):
        for s in cfg.schemes:
            err = errors.get((ni, s))
            res.cells.append(CellResult(
                study=cfg.study, scheme=s, d=cfg.d, n=n, mu=cfg.mu, c=cfg.c, B=cfg.B, gamma=cfg.gamma,
                R=cfg.reps, rejections=None if err else counts[(ni, s)],
                seconds_per_rep=seconds[ni] / cfg.reps, error=err,
            ))
    return res


def write_csv(result: StudyResult, path, timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(result.to_csv(timing=timing))


def svg_chart(result: StudyResult, width: int = 480, height: int = 320) -> str:
    """Static SVG line chart of rejection rate against n, one line per scheme."""
    pad = 48
    ns = result.config.n
    lo, hi = min(ns), max(ns)
    span = hi - lo or 1

    def px(n):
        return pad + (n - lo) / span * (width - 2 * pad)

    def py(rate):
        return height - pad - rate * (height - 2 * pad)

    colors = {"corrected": "#1f77b4", "naive": "#2ca02c", "wild": "#d62728"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{py(0):.1f}" x2="{width - pad}" y2="{py(0):.1f}" stroke="black"/>',
        f'<line x1="{pad}" y1="{py(0):.1f}" x2="{pad}" y2="{py(1):.1f}" stroke="black"/>',
        f'<line x1="{pad}" y1="{py(result.config.gamma):.1f}" x2="{width - pad}" '
        f'y2="{py(result.config.gamma):.1f}" stroke="gray" stroke-dasharray="4 3"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="12">n</text>',
        f'<text x="14" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 14 {height / 2:.0f})" '
        f'text-anchor="middle">rejection rate</text>',
    ]
    for tick in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{pad - 6}" y="{py(tick) + 4:.1f}" text-anchor="end" font-size="10">{tick:g}</text>')
    for n in ns:
        parts.append(f'<text x="{px(n):.1f}" y="{py(0) + 14:.1f}" text-anchor="middle" font-size="10">{n}</text>')
    for k, s in enumerate(result.config.schemes):
        pts = [(px(c.n), py(c.rate)) for c in result.cells if c.scheme == s and c.rejections is not None]
        col = colors.get(s, "black")
        if pts:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
            parts.extend(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{col}"/>' for x, y in pts)
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * k}" text-anchor="end" font-size="11" '
                     f'fill="{col}">{s}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
