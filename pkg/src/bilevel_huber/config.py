"""Experiment configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .bilevel import BilevelConfig
from .gamma import TikhonovTrainConfig

REGULARIZERS = ("huber_tv", "huber_tv2", "tgv")
OBJECTIVES = ("psnr", "stat")
METHODS = (
    "scalar_tv",
    "scalar_tv2",
    "scalar_tgv",
    "bilevel_tv",
    "bilevel_tv2",
    "bilevel_tv2_trained_gamma",
)


@dataclass
class ExperimentConfig:
    """Every knob of a run; the resolved instance is echoed to ``config.json``.

    ``input`` is a PNG/VRF1 path or ``synthetic:<name>``; it is the clean
    image, and the noisy datum is ``input + N(0, noise_variance)`` drawn with
    ``seed``.  ``gamma`` and ``alpha`` take a number or a field file;
    ``gamma`` also accepts ``"trained"``.
    """

    input: str = "synthetic:piecewise_affine"
    size: int = 64
    seed: int = 0
    noise_variance: float | None = None
    regularizer: str = "huber_tv2"
    objective: str = "stat"
    gamma: str | float = 1e-3
    alpha: str | float | None = None
    tgv_alpha0: str | float = 0.2
    tgv_alpha1: str | float = 0.1
    tgv_iters: int = 2000
    s: float = 0.1
    gamma_maxit: int = 100
    newton_tol: float = 1e-4
    # shared bilevel parameters
    alpha_lo: float = 1e-8
    alpha_hi: float = 5.0
    n_w: int = 7
    lambda_h1: float = 1e-11
    tau0: float = 1e-3
    armijo_c: float = 1e-12
    theta_minus: float = 0.25
    theta_plus: float = 2.0
    maxit: int = 100
    alpha_init: float | None = None
    sigma2: float = 0.01
    # compare
    images: tuple[str, ...] = ("synthetic:piecewise_constant", "synthetic:piecewise_affine", "synthetic:bump_texture")
    methods: tuple[str, ...] = METHODS
    scalar_grid: tuple[float, ...] = tuple(float(f"{x:.6g}") for x in np.geomspace(0.01, 1.0, 25))
    out: str = "run"

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        for name in ("gamma", "alpha", "tgv_alpha0", "tgv_alpha1"):
            setattr(self, name, _number_or_path(getattr(self, name)))
        self.images = tuple(self.images)
        self.methods = tuple(self.methods)
        self.scalar_grid = tuple(float(x) for x in self.scalar_grid)
        self.bilevel()  # validates the shared fields

    @property
    def order(self) -> int:
        return 2 if self.regularizer == "huber_tv2" else 1

    @property
    def noise(self) -> float:
        return self.sigma2 if self.noise_variance is None else self.noise_variance

    def bilevel(self) -> BilevelConfig:
        names = {f.name for f in fields(BilevelConfig)}
        return BilevelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def tikhonov(self) -> TikhonovTrainConfig:
        shared = ("n_w", "tau0", "armijo_c", "theta_minus", "theta_plus", "sigma2")
        return TikhonovTrainConfig(maxit=self.gamma_maxit, s=self.s, **{k: getattr(self, k) for k in shared})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _number_or_path(value):
    if value is None or isinstance(value, float):
        return value
    try:
        return float(value)
    except ValueError:
        return str(value)


def load_config(path: str | Path | None, overrides: dict) -> ExperimentConfig:
    """Read a JSON config (if any) and apply non-None overrides on top."""
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)
