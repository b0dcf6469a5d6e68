"""Trajectory logging, CSV serialization, and the run metrics.

Distances are measured to the forbidden-region surface: signed distance
|r - center| - safety_radius, recovered from the logged barrier values
as sqrt(h + R^2) - R so the CSV alone (plus the radius) is sufficient.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .controllers import Obstacle

INFEASIBLE_MARGIN = -1e-6  # margin below this counts as an infeasible step


@dataclass
class TrajectoryLog:
    t: np.ndarray
    states: np.ndarray  # (n, 6)
    u_des: np.ndarray  # (n, 3)
    u: np.ndarray  # (n, 3)
    h: np.ndarray  # (n, n_obstacles)
    margin: np.ndarray  # (n,) min constraint margin psi2(x, u)
    snapshot_version: np.ndarray  # (n,) int
    infeasible: np.ndarray  # (n,) bool
    obstacles: list
    seed: int = 0
    blown_up: bool = False
    note: str = ""

    def __len__(self):
        return len(self.t)

    def to_csv(self, path):
        n_obs = self.h.shape[1]
        header = (
            ["t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z"]
            + ["udes_x", "udes_y", "udes_z", "u_x", "u_y", "u_z"]
            + [f"h_{i + 1}" for i in range(n_obs)]
            + ["psi2_margin", "snapshot_version"]
        )
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for i in range(len(self.t)):
                row = (
                    [repr(float(self.t[i]))]
                    + [repr(float(v)) for v in self.states[i]]
                    + [repr(float(v)) for v in self.u_des[i]]
                    + [repr(float(v)) for v in self.u[i]]
                    + [repr(float(v)) for v in self.h[i]]
                    + [repr(float(self.margin[i])), str(int(self.snapshot_version[i]))]
                )
                w.writerow(row)

    @staticmethod
    def from_csv(path, safety_radius=3.0, center=(0.0, 0.0, 0.0)):
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            rows = list(reader)
        if not rows:
            raise ValueError(f"{path}: empty trajectory")
        h_cols = sorted(
            (c for c in rows[0] if c.startswith("h_")),
            key=lambda c: int(c.split("_")[1]),
        )
        n = len(rows)
        log = TrajectoryLog(
            t=np.array([float(r["t"]) for r in rows]),
            states=np.array(
                [[float(r[c]) for c in ("r_x", "r_y", "r_z", "v_x", "v_y", "v_z")]
                 for r in rows]
            ),
            u_des=np.array(
                [[float(r[c]) for c in ("udes_x", "udes_y", "udes_z")] for r in rows]
            ),
            u=np.array([[float(r[c]) for c in ("u_x", "u_y", "u_z")] for r in rows]),
            h=np.array([[float(r[c]) for c in h_cols] for r in rows]),
            margin=np.array([float(r["psi2_margin"]) for r in rows]),
            snapshot_version=np.array(
                [int(r["snapshot_version"]) for r in rows], dtype=np.int64
            ),
            infeasible=np.zeros(n, dtype=bool),
            obstacles=[
                Obstacle(np.asarray(center, dtype=float), safety_radius)
                for _ in h_cols
            ],
        )
        log.infeasible = log.margin < INFEASIBLE_MARGIN
        return log


@dataclass(frozen=True)
class MetricsReport:
    h_min: float
    h_neg: float
    avg_dist: float
    avg_sdist: float
    s_sdist_var: float
    infeasible_steps: int

    def as_dict(self):
        return {
            "h_min": self.h_min,
            "h_neg": self.h_neg,
            "avg_dist": self.avg_dist,
            "avg_sdist": self.avg_sdist,
            "s_sdist_var": self.s_sdist_var,
            "infeasible_steps": self.infeasible_steps,
        }


def _signed_distances(log):
    """Per-row signed distance to the nearest forbidden-region surface."""
    radii = np.array([o.safety_radius for o in log.obstacles])
    sd = np.sqrt(np.maximum(log.h + radii**2, 0.0)) - radii
    return sd.min(axis=1)


def compute_metrics(log, settle_exclude=20.0, wedge_sectors=None):
    """Safety metrics of a run.

    settle_exclude: initial transient (seconds) excluded from the
    settled-distance statistics.  wedge_sectors: optional list of
    (lo, hi) angle intervals (radians, about the first obstacle's
    center in the x-y plane); rows outside them are dropped entirely.
    """
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    duration = float(log.t[-1] - log.t[0])
    if settle_exclude >= duration:
        raise ValueError(
            f"settle_exclude={settle_exclude} not below duration={duration}"
        )
    keep = np.ones(len(log), dtype=bool)
    if wedge_sectors:
        center = log.obstacles[0].center
        ang = np.mod(
            np.arctan2(log.states[:, 1] - center[1], log.states[:, 0] - center[0]),
            2.0 * np.pi,
        )
        keep = np.zeros(len(log), dtype=bool)
        for lo, hi in wedge_sectors:
            keep |= (ang >= lo) & (ang <= hi)
        if not keep.any():
            raise ValueError("wedge filter removed every row")

    h_row = log.h.min(axis=1)[keep]
    sdist = _signed_distances(log)[keep]
    t = log.t[keep]
    settled = t >= log.t[0] + settle_exclude
    if not settled.any():
        raise ValueError("no rows left after settle exclusion")

    return MetricsReport(
        h_min=float(h_row.min()),
        h_neg=float((h_row < 0.0).mean()),
        avg_dist=float(np.abs(sdist).mean()),
        avg_sdist=float(np.abs(sdist[settled]).mean()),
        s_sdist_var=float(sdist[settled].var()),  # population variance
        infeasible_steps=int(log.infeasible[keep].sum()),
    )


WEDGE_DEFAULT = ((0.0, np.pi / 4.0), (np.pi, 5.0 * np.pi / 4.0))


def metrics_json(report, seed, scenario_hash, extra=None):
    payload = dict(report.as_dict())
    payload["seed"] = int(seed)
    payload["scenario_hash"] = scenario_hash
    if extra:
        payload.update(extra)
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
