"""Randomised property suites for the SSIM' order relations.

Three suites run over random patch pairs:

* ``scale_invariance``  SSIM(I_x, I_y) == SSIM(k I_x, k I_y) when the
  constants follow ``k L`` (tolerance 1e-9)
* ``dominance``         SSIM'_k <= SSIM pointwise for k > 1
* ``k_monotonicity``    SSIM'_k1 <= SSIM'_k2 pointwise for k1 > k2

Order relations are checked pointwise with a small slack for ties at
``I_x == I_y``; any excess is a violation, nothing is averaged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .imaging import ImagePlane, WindowSpec, window_stats
from .ssim import SsimConfig, similarity_from_stats, ssim_scale_invariance_check

__all__ = ["PropertyResult", "ProofReport", "random_patch_pair", "run_property_suites"]

EQUALITY_TOL = 1e-9
ORDER_SLACK = 1e-12
PATCH_KINDS = ("noise", "correlated", "anticorrelated", "smooth", "low_texture", "constant", "identical")


@dataclass
class PropertyResult:
    tolerance: float
    max_violation: float = 0.0
    violations: int = 0
    samples: int = 0

    def update(self, excess: np.ndarray) -> None:
        excess = np.asarray(excess, dtype=np.float64).ravel()
        self.samples += excess.size
        if excess.size:
            self.max_violation = max(self.max_violation, float(excess.max()))
        self.violations += int(np.count_nonzero(excess > self.tolerance))

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "max_violation": self.max_violation,
            "violations": self.violations,
            "samples": self.samples,
            "passed": self.passed,
        }


@dataclass
class ProofReport:
    pairs: int
    k_values: list
    seed: int
    window: dict
    kinds: dict = field(default_factory=dict)
    properties: dict = field(default_factory=dict)
    seconds: float | None = None

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties.values())

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "pairs": self.pairs,
            "k": list(self.k_values),
            "seed": self.seed,
            "window": self.window,
            "patch_kinds": dict(self.kinds),
            "properties": {name: p.to_dict() for name, p in self.properties.items()},
            "passed": self.passed,
        }
        if timing and self.seconds is not None:
            d["seconds"] = self.seconds
        return d


def _smooth(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    out = np.zeros((h, w))
    for _ in range(4):
        f = rng.uniform(0.3, 3.0, size=2)
        out += rng.normal() * np.sin(2 * np.pi * (f[0] * xx + f[1] * yy) + rng.uniform(0, 2 * np.pi))
    return out


def random_patch_pair(rng: np.random.Generator, L: float, kind: str | None = None,
                      min_size: int = 8, max_size: int = 64):
    """Draw a patch pair with values in ``[0, L]``; 8-bit style integers when ``L == 255``."""
    h, w = (int(s) for s in rng.integers(min_size, max_size + 1, size=2))
    if kind is None:
        kind = PATCH_KINDS[int(rng.integers(len(PATCH_KINDS)))]
    u = lambda: rng.random((h, w))
    if kind == "noise":
        x, y = u(), u()
    elif kind == "correlated":
        x = u()
        y = x + rng.uniform(0.01, 0.3) * rng.normal(size=(h, w))
    elif kind == "anticorrelated":
        x = u()
        y = 1 - x + rng.uniform(0.0, 0.2) * rng.normal(size=(h, w))
    elif kind == "smooth":
        x = 0.5 + 0.15 * _smooth(rng, h, w)
        y = 0.5 + 0.15 * _smooth(rng, h, w)
    elif kind == "low_texture":
        base = rng.uniform(0.05, 0.95)
        x = base + 0.003 * rng.normal(size=(h, w))
        y = x + rng.uniform(-0.05, 0.05) + 0.003 * rng.normal(size=(h, w))
    elif kind == "constant":
        x = np.full((h, w), rng.uniform())
        y = np.full((h, w), rng.uniform())
    elif kind == "identical":
        x = u()
        y = x.copy()
    else:
        raise ContractViolation(f"unknown patch kind {kind!r}")
    x, y = np.clip(x, 0, 1) * L, np.clip(y, 0, 1) * L
    if L == 255:
        x, y = np.rint(x), np.rint(y)
    return ImagePlane(x, L), ImagePlane(y, L), kind


def run_property_suites(pairs: int = 1000, k_values=(1.5, 2.0, 5.0, 10.0), seed: int = 0,
                        ranges=(1.0, 255.0), window: WindowSpec | None = None) -> ProofReport:
    """Run all three suites; each pair draws its range from ``ranges``."""
    ks = sorted(float(k) for k in k_values)
    if not ks or ks[0] <= 1:
        raise ContractViolation("k grid must contain values > 1")
    if pairs < 1:
        raise ContractViolation("need at least one pair")
    window = window or WindowSpec()
    rng = np.random.default_rng(seed)
    report = ProofReport(pairs, ks, seed, window.to_dict())
    eq = report.properties["scale_invariance"] = PropertyResult(EQUALITY_TOL)
    dom = report.properties["dominance"] = PropertyResult(ORDER_SLACK)
    mono = report.properties["k_monotonicity"] = PropertyResult(ORDER_SLACK)
    t0 = time.perf_counter()
    for _ in range(pairs):
        L = float(ranges[int(rng.integers(len(ranges)))])
        # patches are 8x8 to 64x64, never smaller than the window
        I_x, I_y, kind = random_patch_pair(rng, L, min_size=max(8, window.size))
        report.kinds[kind] = report.kinds.get(kind, 0) + 1
        cfg = SsimConfig(L=L, k=1.0, window=window)
        st = window_stats(I_x.data, I_y.data, window)
        prev = similarity_from_stats(st, cfg.C1, cfg.C2).index
        base = prev
        for k in ks:
            d = ssim_scale_invariance_check(I_x, I_y, k, cfg)
            eq.update(np.array([d]))
            cur = similarity_from_stats(st, cfg.C1, cfg.C2, k).index
            dom.update(cur - base)
            if k != ks[0]:
                mono.update(cur - prev)
            prev = cur
    report.seconds = time.perf_counter() - t0
    return report
