"""Outer FISTA loop alternating the fused-image prox step with registration."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from sirf.registration import RegistrationConfig, register
from sirf.resample import TransformParams, downsample, downsample_adjoint, psi_norm_squared, upsample, warp
from sirf.tensor import as_image, gradient_group_norm, replicate_pan
from sirf.vtv import next_t, vtv_denoise

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    lam: float = 0.1
    max_outer: int = 300
    tol: float = 1e-3
    inner_denoise_iters: int = 3
    reg_enabled: bool = True
    reg_first_k: int = 3
    L: float | None = None  # None: exact ||psi^T psi|| of the data gradient
    warm_start_dual: bool = False
    antialias: bool = True
    momentum: bool = True
    rescale: bool = True  # solve on a 0-255 copy of the inputs, map the result back
    # Early iterates are blurry and pull the finest pyramid level towards
    # half-pixel offsets; a stricter sufficient-decrease test damps that.
    registration: RegistrationConfig = field(default_factory=lambda: RegistrationConfig(armijo=0.5))

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be non-negative, got {self.tol}")
        if self.L is not None and not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.reg_first_k > self.max_outer:
            raise ValueError("reg_first_k cannot exceed max_outer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceTrace:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def column(self, name):
        return [r[name] for r in self.rows]

    def __len__(self):
        return len(self.rows)

    COLUMNS = ("iteration", "objective", "data_term", "regularizer", "rel_change", "tx", "ty", "theta", "seconds")

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if c != "theta" else " ".join(repr(v) for v in r[c]) for c in self.COLUMNS])


class SolverError(RuntimeError):
    """Raised when the objective becomes non-finite; carries the trace so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def reference_image(p, theta: TransformParams, s: int) -> np.ndarray:
    """``T(D(P))`` with border clamping outside the overlap."""
    w, _ = warp(p, theta, fill="edge")
    return replicate_pan(w, s)


def objective_terms(x, m, ref, lam, c, antialias=True):
    data = 0.5 * float(np.sum((downsample(x, c, antialias) - m) ** 2))
    reg = float(np.sum(gradient_group_norm(x - ref)))
    return data + lam * reg, data, reg


def sirf_objective(x, theta: TransformParams, m, p, lam: float, c: int | None = None, antialias: bool = True) -> float:
    """``1/2 ||psi X - M||^2 + lam ||grad X - grad T(D(P))||_{2,1}``."""
    if c is None:
        c = x.shape[1] // m.shape[1]
    ref = reference_image(np.asarray(p, dtype=np.float64).reshape((1,) + x.shape[1:]), theta, x.shape[0])
    return objective_terms(x, m, ref, lam, c, antialias)[0]


def lipschitz_step(shape, c: int, cfg: SolverConfig) -> float:
    """Step constant ``L`` for the data-term gradient.

    Defaults to ``||psi^T psi||`` itself. A user-supplied ``L`` below it is
    doubled until it is a valid bound (i.e. the step is halved).
    """
    if c == 1:
        return 1.0 if cfg.L is None else cfg.L
    lip = psi_norm_squared(shape, c, cfg.antialias)
    if cfg.L is None:
        return lip
    step_l = cfg.L
    while lip > step_l * (1 + 1e-6):
        log.warning("||psi^T psi|| = %.4f exceeds L = %.4f; halving the step", lip, step_l)
        step_l *= 2.0
    return step_l


def _check_inputs(ms, pan):
    ms = as_image(ms, "multispectral image")
    pan = as_image(pan, "pan image")
    if pan.shape[0] != 1:
        raise ValueError(f"pan image must have one band, got {pan.shape[0]}")
    m, n = pan.shape[1:]
    mm, mn = ms.shape[1:]
    if m % mm or n % mn or m // mm != n // mn:
        raise ValueError(
            f"pan size {m}x{n} is not an integer multiple of multispectral size {mm}x{mn}"
        )
    return ms, pan, m // mm


def intensity_map(ms, pan, top: float = 255.0):
    """Shared gain and offset taking the joint range of both inputs onto ``[0, top]``."""
    lo = min(float(ms.min()), float(pan.min()))
    hi = max(float(ms.max()), float(pan.max()))
    gain = top / (hi - lo) if hi > lo else 1.0
    return gain, lo


def sirf_fuse(ms, pan, cfg: SolverConfig | None = None, theta0: TransformParams | None = None, callback=None):
    """Fuse ``ms`` (s, m/c, n/c) with ``pan`` (1, m, n).

    Returns ``(X, theta, trace)``. ``callback(k, X, theta)`` is called after
    every outer iteration. With ``cfg.rescale`` the solve runs on a copy of
    both images mapped linearly onto 0..255; X is mapped back before it is
    returned or handed to the callback, while the objective values in the
    trace stay in the rescaled units that ``lam`` refers to.
    """
    cfg = cfg or SolverConfig()
    ms, pan, c = _check_inputs(ms, pan)
    gain, offset = intensity_map(ms, pan) if cfg.rescale else (1.0, 0.0)
    ms = (ms - offset) * gain
    pan = (pan - offset) * gain
    s = ms.shape[0]
    theta = theta0 or TransformParams.identity(cfg.registration.kind)

    step_l = lipschitz_step(pan.shape, c, cfg)
    lam = cfg.lam / step_l
    aa = cfg.antialias

    y = upsample(ms, c)
    x_prev = y.copy()
    ref = reference_image(pan, theta, s)
    t = 1.0
    dual = None
    trace = ConvergenceTrace()
    t_start = time.perf_counter()

    for k in range(1, cfg.max_outer + 1):
        g = downsample_adjoint(downsample(y, c, aa) - ms, c, aa)
        g *= -1.0 / step_l
        g += y
        x, state = vtv_denoise(g, ref, lam, cfg.inner_denoise_iters, dual)
        if cfg.warm_start_dual:
            dual = state

        if cfg.reg_enabled and k <= cfg.reg_first_k:
            theta, _ = register(x, pan, theta, cfg.registration)
            ref = reference_image(pan, theta, s)

        if cfg.momentum:
            t_new = next_t(t)
            y = np.subtract(x, x_prev)
            y *= (t - 1.0) / t_new
            y += x
            t = t_new
        else:
            y = x

        denom = np.linalg.norm(x_prev)
        rel = float(np.linalg.norm(x - x_prev) / denom) if denom > 0 else float(np.linalg.norm(x - x_prev))
        obj, data, reg = objective_terms(x, ms, ref, cfg.lam, c, aa)
        tx, ty = theta.shift
        trace.add(
            iteration=k, objective=obj, data_term=data, regularizer=reg, rel_change=rel,
            tx=tx, ty=ty, theta=theta.theta, seconds=time.perf_counter() - t_start,
        )
        if not math.isfinite(obj):
            raise SolverError(f"objective became non-finite at iteration {k}", trace)
        if callback is not None:
            callback(k, x / gain + offset, theta)
        x_prev = x
        if rel < cfg.tol:
            break
    return x_prev / gain + offset, theta, trace


def initial_objective(ms, pan, cfg: SolverConfig, theta: TransformParams | None = None) -> float:
    """Objective at the bicubic initialisation (identity transform unless given), in solver units."""
    ms, pan, c = _check_inputs(ms, pan)
    gain, offset = intensity_map(ms, pan) if cfg.rescale else (1.0, 0.0)
    ms = (ms - offset) * gain
    pan = (pan - offset) * gain
    theta = theta or TransformParams.identity(cfg.registration.kind)
    ref = reference_image(pan, theta, ms.shape[0])
    return objective_terms(upsample(ms, c), ms, ref, cfg.lam, c, cfg.antialias)[0]
