"""Synthetic experiment: draw a GP truth from a known spectrum, observe it at
random pixels with noise, and compare deep, flat and alternating inference
against the Wiener filter that knows the true spectrum.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import fieldio, fieldops
from .errors import DomainError
from .gpmodel import SmoothnessHyper, SpectralGPModel
from .inference import ALTERNATING, DEEP, FLAT, InferenceConfig, run_inference, wiener_filter

SCHEMA_VERSION = 1
PRESETS = {"full": 1.0, "scattered": 0.1, "sparse": 0.005}
MODES = (DEEP, FLAT, ALTERNATING)


@dataclass(frozen=True)
class ExperimentConfig:
    n_side: int = 64
    pixel_size: float = 1.0
    coverage: float = 1.0
    noise: float = 0.03
    # truth spectrum: P0 (1 + (k/k0)^2)^(-slope/2) + bump
    p0: float = 1.0
    k0_factor: float = 2.0          # k0 in units of the fundamental
    slope: float = 4.0
    bump_rel: float = 0.3           # bump height relative to the power law at k_b
    bump_position: float = 0.5      # k_b as a fraction of the ln k range
    bump_width: float = 0.3         # in ln k
    sigma_smooth: float = 10.0
    sigma_offset: float = 10.0
    n_bins: Optional[int] = None
    seed: int = 0
    mode: str = FLAT
    outer_iterations: int = 60
    inner_iterations: int = 20
    schedule: tuple = (1, 3)
    cg_tol: float = 1e-7
    cg_maxiter: int = 2000
    samples: int = 4
    preset: Optional[str] = None
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(int(v) for v in self.schedule))
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if not 0 < self.coverage <= 1:
            raise DomainError("coverage must lie in (0, 1]")
        if n_points(self.coverage, self.n_side) < 1:
            raise DomainError("coverage selects no pixel")
        for name in ("pixel_size", "p0", "k0_factor", "bump_width", "sigma_smooth", "sigma_offset", "cg_tol"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.noise < 0 or self.slope < 0 or self.bump_rel < 0:
            raise DomainError("noise, slope and bump_rel must be non-negative")

    @classmethod
    def from_preset(cls, preset, **overrides):
        if preset not in PRESETS:
            raise DomainError(f"unknown preset {preset!r}")
        return cls(coverage=PRESETS[preset], preset=preset, **overrides)

    def to_manifest(self):
        cfg = asdict(self)
        cfg["schedule"] = list(self.schedule)
        return {"schema_version": SCHEMA_VERSION, "config": cfg}

    @classmethod
    def from_manifest(cls, manifest):
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(f"unsupported manifest schema {manifest.get('schema_version')!r}")
        known = {f.name for f in fields(cls)}
        cfg = manifest["config"]
        unknown = set(cfg) - known
        if unknown:
            raise DomainError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**cfg)

    def inference_config(self):
        return InferenceConfig(
            outer_iterations=self.outer_iterations,
            n_sample_pairs=self.samples,
            inner_iterations=self.inner_iterations,
            cg_tol=self.cg_tol,
            cg_maxiter=self.cg_maxiter,
            seed=self.seed,
            schedule=self.schedule,
            record_wall_time=self.record_wall_time,
        )


def n_points(coverage, n_side):
    # tolerance keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(coverage * n_side * n_side + 1e-9))


def make_binning(config):
    return fieldops.build_k_grid(fieldops.Grid2D(config.n_side, config.pixel_size), config.n_bins)


def truth_spectrum(config, binning):
    """Per-bin truth power: smoothly broken power law plus a log-normal bump."""
    k = binning.bin_centers
    k0 = config.k0_factor * binning.grid.fundamental

    def powerlaw(kk):
        return config.p0 * (1.0 + (kk / k0) ** 2) ** (-0.5 * config.slope)

    lo, hi = binning.log_edges[0], binning.log_edges[-1]
    log_kb = lo + config.bump_position * (hi - lo)
    amp = config.bump_rel * powerlaw(np.exp(log_kb))
    p = powerlaw(k)
    nz = k > 0
    p[nz] += amp * np.exp(-((np.log(k[nz]) - log_kb) ** 2) / (2 * config.bump_width ** 2))
    return p


def generate_truth(config, binning=None):
    """Return ``(tau_true, s_true)``; ``s_true`` is an ``(n, n)`` field."""
    binning = binning or make_binning(config)
    p = truth_spectrum(config, binning)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    grid = binning.grid
    white = rng.standard_normal(grid.size)
    amp = np.sqrt(fieldops.power_distribute(binning, p)).ravel()
    s = fieldops.hartley(amp * white, grid).reshape(grid.shape)
    return np.log(p), s


def generate_data(s_true, config):
    """Return ``(d, mask)``; ``mask`` is sorted, ``d = s_true[mask] + noise``."""
    s = np.asarray(s_true, dtype=float).ravel()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    perm = rng.permutation(s.size)
    mask = np.sort(perm[: n_points(config.coverage, config.n_side)])
    d = s[mask] + config.noise * rng.standard_normal(mask.size)
    return d, mask


def build_model(config, d, mask, binning=None):
    binning = binning or make_binning(config)
    return SpectralGPModel(binning, mask, d, config.noise, SmoothnessHyper(config.sigma_smooth, config.sigma_offset))


def reference_filter(model, tau_true, cg_tol=1e-10, cg_maxiter=5000):
    """Wiener-filter mean for the true spectrum, the baseline of ``eps``."""
    return wiener_filter(model, tau_true, cg_tol, cg_maxiter).m.reshape(model.grid.shape)


@dataclass
class ExperimentResult:
    out_dir: Path
    records: list
    state: object
    m_wf: np.ndarray
    s_true: np.ndarray
    tau_true: np.ndarray

    @property
    def final_eps(self):
        return self.records[-1].eps if self.records else float("nan")


def records_csv(records, with_wall_time=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "eps", "wall_ms", "mode"])
    for r in records:
        w.writerow([r.iteration, repr(float(r.eps)), f"{r.wall_ms:.3f}" if with_wall_time else "", r.mode])
    return buf.getvalue()


def run_experiment(config, out_dir, write=True):
    """Generate truth and data, run inference, write all artifacts.

    Files: ``manifest.json``, ``truth.fld``, ``truth_spectrum.fld``,
    ``data.fld`` (data scattered onto the grid), ``mask.fld`` (0/1),
    ``m_wf.fld``, ``m_<mode>.fld``, ``convergence_<mode>.csv`` and
    ``spec_<mode>_<iter>.fld`` per outer iteration.
    """
    binning = make_binning(config)
    tau_true, s_true = generate_truth(config, binning)
    d, mask = generate_data(s_true, config)
    if config.noise <= 0:
        raise DomainError("inference needs a positive noise level")
    model = build_model(config, d, mask, binning)
    m_wf = reference_filter(model, tau_true)
    state, records = run_inference(model, config.inference_config(), config.mode, m_ref=m_wf)
    out = Path(out_dir)
    if write:
        _write_outputs(out, config, binning, tau_true, s_true, d, mask, m_wf, state, records)
    return ExperimentResult(out, records, state, m_wf, s_true, tau_true)


def _write_outputs(out, config, binning, tau_true, s_true, d, mask, m_wf, state, records):
    out.mkdir(parents=True, exist_ok=True)
    n, dx = config.n_side, config.pixel_size
    with open(out / "manifest.json", "w") as fh:
        json.dump(config.to_manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    fieldio.write_field(out / "truth.fld", s_true, n, dx)
    fieldio.write_spectrum(out / "truth_spectrum.fld", np.exp(tau_true), binning)
    data_field = np.zeros(n * n)
    data_field[mask] = d
    indicator = np.zeros(n * n)
    indicator[mask] = 1.0
    fieldio.write_field(out / "data.fld", data_field, n, dx)
    fieldio.write_field(out / "mask.fld", indicator, n, dx)
    fieldio.write_field(out / "m_wf.fld", m_wf, n, dx)
    fieldio.write_field(out / f"m_{config.mode}.fld", state.m, n, dx)
    for r in records:
        fieldio.write_spectrum(out / f"spec_{config.mode}_{r.iteration}.fld", r.spectrum, binning)
    with open(out / f"convergence_{config.mode}.csv", "w", newline="") as fh:
        fh.write(records_csv(records, config.record_wall_time))


def load_manifest(path):
    with open(path) as fh:
        return ExperimentConfig.from_manifest(json.load(fh))


def with_mode(config, mode):
    return replace(config, mode=mode)

