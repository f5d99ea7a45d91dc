"""Trajectory evaluation metrics and the machine-readable report.

All error accumulation runs in float64. RMSE takes the L2 norm of each error
vector before squaring (a per-component RMSE systematically under-reports).
No alignment transform is applied before ATE: estimates are expected to share
the truth's initial pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .motion import Trajectory
from .quat import angular_distance_arr


def rmse(errors) -> float:
    """Root mean square of L2 norms: sqrt(mean_i ||E_i||^2)."""
    arr = np.asarray(errors, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("rmse of an empty error list")
    if arr.ndim == 1:
        arr = arr[:, None]
    return float(np.sqrt(np.mean(np.sum(arr * arr, axis=1))))


def _positions(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.pos[:, :2].astype(np.float64)
    return np.asarray(traj, dtype=np.float64)[:, :2]


def ate(est, truth) -> float:
    """Absolute trajectory error: RMSE of pointwise position differences."""
    e, t = _positions(est), _positions(truth)
    if len(e) != len(t):
        raise ValueError(f"trajectory lengths differ: {len(e)} vs {len(t)}")
    return rmse(t - e)


def t_rte(est, truth, interval: float = 60.0, dt: float | None = None) -> float | None:
    """Time-normalized relative error over all sliding windows of ``interval``
    seconds (stride 1 sample). Returns None when the trajectory is too short."""
    e, t = _positions(est), _positions(truth)
    if len(e) != len(t):
        raise ValueError(f"trajectory lengths differ: {len(e)} vs {len(t)}")
    if dt is None:
        if not isinstance(truth, Trajectory):
            raise ValueError("pass dt when truth is a bare position array")
        dt = truth.dt
    span = int(round(interval / dt))
    if span <= 0 or span >= len(t):
        return None
    diff = (t[span:] - t[:-span]) - (e[span:] - e[:-span])
    return rmse(diff)


def d_rte(est, truth, distance: float = 1.0) -> float | None:
    """Distance-normalized relative error: for each start index, the window
    ends where the truth path has travelled ``distance`` meters. Returns None
    when the truth path is shorter than ``distance``."""
    e, t = _positions(est), _positions(truth)
    if len(e) != len(t):
        raise ValueError(f"trajectory lengths differ: {len(e)} vs {len(t)}")
    seg = np.linalg.norm(np.diff(t, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    # first j with arc[j] >= arc[i] + distance, exclusive end handled by side
    ends = np.searchsorted(arc, arc + distance, side="left")
    valid = ends < len(t)
    if not np.any(valid):
        return None
    i = np.nonzero(valid)[0]
    j = ends[valid]
    diff = (t[j] - t[i]) - (e[j] - e[i])
    return rmse(diff)


def sigma_coverage(errors, covariances) -> tuple[float, float, float]:
    """Fractions of errors with ||e|| <= k * sqrt(trace(Sigma)) for k = 1, 2, 3."""
    errs = np.asarray(errors, dtype=np.float64)
    covs = np.asarray(covariances, dtype=np.float64)
    if len(errs) != len(covs):
        raise ValueError("need one covariance per error")
    norms = np.linalg.norm(errs, axis=1)
    radii = np.sqrt(np.einsum("nii->n", covs))
    return tuple(float(np.mean(norms <= k * radii)) for k in (1, 2, 3))


def orientation_rmse(est_quats: np.ndarray, truth_quats: np.ndarray) -> float:
    """RMSE of the geodesic angle between estimated and true orientations."""
    if len(est_quats) != len(truth_quats):
        raise ValueError("quaternion streams must align")
    return rmse(angular_distance_arr(est_quats, truth_quats))


@dataclass
class MetricReport:
    """One evaluation row; None marks a metric unavailable for this input."""

    ate: float
    t_rte: float | None = None
    d_rte: float | None = None
    orient_rmse: float | None = None
    sigma_coverage: tuple | None = None
    runtime_ms_per_100: float | None = None
    t_rte_interval: float = 60.0
    d_rte_distance: float = 1.0
    heading_source: str | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("ate", "t_rte", "d_rte", "orient_rmse"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.sigma_coverage is not None:
            cov = tuple(float(c) for c in self.sigma_coverage)
            if any(not 0.0 <= c <= 1.0 for c in cov):
                raise ValueError("coverage fractions must lie in [0, 1]")
            if not (cov[0] <= cov[1] <= cov[2]):
                raise ValueError("coverage must be nondecreasing in k")
            self.sigma_coverage = cov

    def to_json(self) -> str:
        obj = {
            "ate_m": self.ate,
            "t_rte_m": self.t_rte,
            "t_rte_interval_s": self.t_rte_interval,
            "d_rte_m": self.d_rte,
            "d_rte_distance_m": self.d_rte_distance,
            "orient_rmse_rad": self.orient_rmse,
            "sigma_coverage": list(self.sigma_coverage) if self.sigma_coverage is not None else None,
            "runtime_ms_per_100": self.runtime_ms_per_100,
            "heading_source": self.heading_source,
            "extras": self.extras,
        }
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        cov = obj.get("sigma_coverage")
        return cls(
            ate=obj["ate_m"],
            t_rte=obj.get("t_rte_m"),
            d_rte=obj.get("d_rte_m"),
            orient_rmse=obj.get("orient_rmse_rad"),
            sigma_coverage=tuple(cov) if cov is not None else None,
            runtime_ms_per_100=obj.get("runtime_ms_per_100"),
            t_rte_interval=obj.get("t_rte_interval_s", 60.0),
            d_rte_distance=obj.get("d_rte_distance_m", 1.0),
            heading_source=obj.get("heading_source"),
            extras=obj.get("extras", {}),
        )

    def table(self) -> str:
        def fmt(v, unit=""):
            return "n/a" if v is None else f"{v:.4f}{unit}"

        rows = [
            ("ATE", fmt(self.ate, " m")),
            (f"T-RTE ({self.t_rte_interval:.0f} s)", fmt(self.t_rte, " m")),
            (f"D-RTE ({self.d_rte_distance:.0f} m)", fmt(self.d_rte, " m")),
            ("Orientation RMSE", fmt(self.orient_rmse, " rad")),
        ]
        if self.sigma_coverage is not None:
            rows.append(("Coverage 1/2/3 sigma", "/".join(f"{c:.3f}" for c in self.sigma_coverage)))
        if self.runtime_ms_per_100 is not None:
            rows.append(("Runtime per 100 samples", fmt(self.runtime_ms_per_100, " ms")))
        if self.heading_source:
            rows.append(("Heading source", self.heading_source))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    def csv_row(self) -> tuple[str, str]:
        """Header and value lines for the delimited metrics file."""
        names = ["ate_m", "t_rte_m", "d_rte_m", "orient_rmse_rad",
                 "cov_1sigma", "cov_2sigma", "cov_3sigma", "runtime_ms_per_100"]
        cov = self.sigma_coverage or (None, None, None)
        values = [self.ate, self.t_rte, self.d_rte, self.orient_rmse, cov[0], cov[1], cov[2],
                  self.runtime_ms_per_100]
        render = ["" if v is None else f"{v:.9g}" for v in values]
        return ",".join(names), ",".join(render)


def evaluate_trajectories(est: Trajectory, truth: Trajectory,
                          t_rte_interval: float = 60.0, d_rte_distance: float = 1.0) -> MetricReport:
    """Full position/orientation metric sweep for one trajectory pair."""
    if len(est) != len(truth):
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(truth)}")
    report = MetricReport(
        ate=ate(est, truth),
        t_rte=t_rte(est, truth, interval=t_rte_interval),
        d_rte=d_rte(est, truth, distance=d_rte_distance),
        t_rte_interval=t_rte_interval,
        d_rte_distance=d_rte_distance,
    )
    if est.quat is not None and truth.quat is not None:
        report.orient_rmse = orientation_rmse(est.quat, truth.quat)
    return report
