"""Scenario configuration, the closed-loop simulation, and benchmarking.

The loop runs at a fixed control rate (100 Hz by default): load the
newest model snapshot if one was published, generate the PID desired
control, filter it through the safety QP, step the perturbed plant with
RK4, and append the state-control pair to the training queue.  The
online trainer either runs interleaved at a fixed cadence (fully
deterministic) or on a worker thread exchanging queue copies and
immutable snapshots (never blocking the control loop).
"""

import copy
import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .controllers import (
    AdaptiveEstimate,
    CbfGains,
    Obstacle,
    SafetyConstraint,
    hoacbf_control,
    hoacbf_update,
    hocbf_control,
    nodehoacbf_control,
    pid_desired_control,
    reference_circle,
)
from .dynamics import IntegrationError, ResidualField, true_step
from .residual import ResidualNet, load_model
from .simlog import WEDGE_DEFAULT, TrajectoryLog, compute_metrics
from .training import (
    Sample,
    Trainer,
    TrainerConfig,
    TrainingQueue,
    dataset_from_log,
    offline_train,
)

CONTROLLERS = (
    "hocbf_no_residual",
    "hocbf",
    "hoacbf",
    "node_online",
    "node_offline",
)


class ConfigError(ValueError):
    """Invalid scenario or suite configuration."""


@dataclass(frozen=True)
class ReferenceConfig:
    radius: float = 2.0
    height: float = 1.0
    omega: float = 0.5


@dataclass(frozen=True)
class PidConfig:
    kp: float = 6.0
    kd: float = 4.0


@dataclass(frozen=True)
class InitConfig:
    """Initial state: a point on a circle of ``radius`` at ``height``;
    the angle is drawn from the scenario seed when left unset."""

    radius: float = 3.5
    height: float = 1.0
    angle: float | None = None
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HoAcbfConfig:
    kappa: float = 1.0
    gamma: float = 0.05  # scalar multiple of the identity gain matrix
    y_kind: str = "state"
    history_span: float = 0.5
    theta_min: float = -4.0
    theta_max: float = 4.0


@dataclass(frozen=True)
class Scenario:
    name: str = ""
    controller: str = "hocbf"
    residual: ResidualField = field(default_factory=ResidualField.none)
    duration: float = 40.0
    dt: float = 0.01
    obstacles: tuple = (Obstacle((0.0, 0.0, 0.0), 3.0),)
    gains: CbfGains = CbfGains(2.0, 2.0)
    reference: ReferenceConfig = ReferenceConfig()
    pid: PidConfig = PidConfig()
    init: InitConfig = InitConfig()
    queue_capacity: float = 10.0
    trainer: TrainerConfig = TrainerConfig()
    train_interval: float = 1.0
    offline_epochs: int = 400
    hoacbf: HoAcbfConfig = HoAcbfConfig()
    seed: int = 0
    settle_exclude: float = 20.0
    model_path: str | None = None
    u_box: tuple | None = None
    wedge_filter: bool = False
    cbf_margin: float = 0.36  # psi2 >= margin; buffers the 100 Hz hold

    def validate(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}")
        if self.duration <= 0 or self.dt <= 0:
            raise ConfigError("duration and dt must be > 0")
        if self.settle_exclude >= self.duration:
            raise ConfigError("settle_exclude must be below duration")
        if not self.obstacles:
            raise ConfigError("at least one obstacle is required")
        if self.queue_capacity < 0:
            raise ConfigError("queue_capacity must be >= 0")
        if self.train_interval <= 0:
            raise ConfigError("train_interval must be > 0")
        if self.u_box is not None and self.u_box[0] >= self.u_box[1]:
            raise ConfigError("u_box must be (lo, hi) with lo < hi")

    @property
    def label(self):
        return self.name or f"{self.controller}-{self.residual.kind}"

    def to_dict(self):
        return {
            "name": self.name,
            "controller": self.controller,
            "residual": {"kind": self.residual.kind, "k": self.residual.k},
            "duration": self.duration,
            "dt": self.dt,
            "obstacles": [
                {"center": list(map(float, o.center)), "safety_radius": o.safety_radius}
                for o in self.obstacles
            ],
            "gains": {"gamma1": self.gains.gamma1, "gamma2": self.gains.gamma2},
            "reference": {
                "radius": self.reference.radius,
                "height": self.reference.height,
                "omega": self.reference.omega,
            },
            "pid": {"kp": self.pid.kp, "kd": self.pid.kd},
            "init": {
                "radius": self.init.radius,
                "height": self.init.height,
                "angle": self.init.angle,
                "velocity": list(map(float, self.init.velocity)),
            },
            "queue_capacity": self.queue_capacity,
            "trainer": {
                "learning_rate": self.trainer.learning_rate,
                "epochs": self.trainer.epochs,
                "lam": self.trainer.lam,
                "horizon": self.trainer.horizon,
                "hidden": self.trainer.hidden,
            },
            "train_interval": self.train_interval,
            "offline_epochs": self.offline_epochs,
            "hoacbf": {
                "kappa": self.hoacbf.kappa,
                "gamma": self.hoacbf.gamma,
                "y_kind": self.hoacbf.y_kind,
                "history_span": self.hoacbf.history_span,
                "theta_min": self.hoacbf.theta_min,
                "theta_max": self.hoacbf.theta_max,
            },
            "seed": self.seed,
            "settle_exclude": self.settle_exclude,
            "model_path": self.model_path,
            "u_box": list(self.u_box) if self.u_box else None,
            "wedge_filter": self.wedge_filter,
            "cbf_margin": self.cbf_margin,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)

        def section(key, allowed):
            sub = dict(d.pop(key, {}) or {})
            unknown = set(sub) - set(allowed)
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
            return sub

        res = section("residual", ("kind", "k"))
        residual = ResidualField(res.get("kind", "none"), float(res.get("k", 0.0)))
        obstacles = tuple(
            Obstacle(np.asarray(o["center"], dtype=float), float(o["safety_radius"]))
            for o in d.pop("obstacles", [{"center": (0, 0, 0), "safety_radius": 3.0}])
        )
        gains_d = section("gains", ("gamma1", "gamma2"))
        ref_d = section("reference", ("radius", "height", "omega"))
        pid_d = section("pid", ("kp", "kd"))
        init_d = section("init", ("radius", "height", "angle", "velocity"))
        if init_d.get("velocity") is not None:
            init_d["velocity"] = tuple(float(v) for v in init_d["velocity"])
        tr_d = section(
            "trainer", ("learning_rate", "epochs", "lam", "horizon", "hidden")
        )
        ho_d = section(
            "hoacbf",
            ("kappa", "gamma", "y_kind", "history_span", "theta_min", "theta_max"),
        )
        u_box = d.pop("u_box", None)
        scalar = {
            k: d.pop(k)
            for k in (
                "name",
                "controller",
                "duration",
                "dt",
                "queue_capacity",
                "train_interval",
                "offline_epochs",
                "seed",
                "settle_exclude",
                "model_path",
                "wedge_filter",
                "cbf_margin",
            )
            if k in d
        }
        if d:
            raise ConfigError(f"unknown scenario keys: {sorted(d)}")
        sc = Scenario(
            residual=residual,
            obstacles=obstacles,
            gains=CbfGains(**gains_d) if gains_d else CbfGains(),
            reference=ReferenceConfig(**ref_d) if ref_d else ReferenceConfig(),
            pid=PidConfig(**pid_d) if pid_d else PidConfig(),
            init=InitConfig(**init_d) if init_d else InitConfig(),
            trainer=TrainerConfig(**tr_d) if tr_d else TrainerConfig(),
            hoacbf=HoAcbfConfig(**ho_d) if ho_d else HoAcbfConfig(),
            u_box=tuple(u_box) if u_box else None,
            **scalar,
        )
        sc.validate()
        return sc


def scenario_hash(sc):
    """Stable hash of the scenario config (name excluded)."""
    d = sc.to_dict()
    d.pop("name")
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_scenario(path):
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return Scenario.from_dict(data)


def load_suite(path):
    with open(path) as f:
        data = yaml.safe_load(f)
    if isinstance(data, dict) and "scenarios" in data:
        data = data["scenarios"]
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list of scenarios")
    return [Scenario.from_dict(d) for d in data]


def _seed_streams(sc):
    init_ss, net_ss = np.random.SeedSequence(sc.seed).spawn(2)
    return np.random.default_rng(init_ss), int(net_ss.generate_state(1)[0])


def initial_state(sc):
    rng, _ = _seed_streams(sc)
    angle = sc.init.angle
    if angle is None:
        angle = rng.uniform(0.0, 2.0 * np.pi)
    x = np.empty(6)
    x[0] = sc.init.radius * np.cos(angle)
    x[1] = sc.init.radius * np.sin(angle)
    x[2] = sc.init.height
    x[3:] = sc.init.velocity
    return x


def _box_constraints(u_box):
    if u_box is None:
        return []
    lo, hi = u_box
    cons = []
    for i in range(3):
        a = np.zeros(3)
        a[i] = 1.0
        cons.append(SafetyConstraint(a, float(lo)))
        cons.append(SafetyConstraint(-a, float(-hi)))
    return cons


def offline_model_for(sc, cache=None):
    """Pretrained residual net for a node_offline scenario: collect the
    scenario's duration of data with the plain HOCBF controller under
    the same residual and seed, then train on all of it."""
    _, net_seed = _seed_streams(sc)
    key = ("model", scenario_hash(sc))
    if cache is not None and key in cache:
        return cache[key]
    data_sc = replace(sc, controller="hocbf", name="", model_path=None)
    log = _run_cached(data_sc, "interleaved", cache)
    cfg = replace(sc.trainer, seed=net_seed)
    snap = offline_train(dataset_from_log(log), cfg, sc.offline_epochs)
    if cache is not None:
        cache[key] = snap.net
    return snap.net


def run_scenario(sc, mode="interleaved", cache=None):
    """Execute a scenario and return its trajectory log.

    mode: "interleaved" trains at a fixed cadence inside the loop and is
    fully deterministic; "concurrent" runs the trainer on a worker
    thread.  Integrator blow-up truncates the run and flags the log.
    """
    sc.validate()
    if mode not in ("interleaved", "concurrent"):
        raise ConfigError(f"unknown mode {mode!r}")
    _, net_seed = _seed_streams(sc)
    truth = (
        ResidualField.none()
        if sc.controller == "hocbf_no_residual"
        else sc.residual
    )

    x = initial_state(sc)
    n = round(sc.duration / sc.dt)
    rows = n + 1
    extra = _box_constraints(sc.u_box)

    # controller-specific state
    queue = None
    trainer = None
    current_net = None
    current_version = 0
    pending = None
    est = None
    hist = None
    worker = None
    stop_event = None
    qlock = threading.Lock()
    shared = {}

    if sc.controller == "node_online":
        cfg = replace(sc.trainer, seed=net_seed)
        trainer = Trainer(ResidualNet.initialize(cfg.hidden, cfg.seed), cfg)
        queue = TrainingQueue(sc.queue_capacity)
        current_net = trainer.net
        current_version = 0
        if mode == "concurrent":
            stop_event = threading.Event()
            shared["snapshot"] = trainer.snapshot()

            def _train_forever():
                while not stop_event.is_set():
                    with qlock:
                        enough = len(queue) > sc.trainer.horizon + 1
                        arrays = queue.samples() if enough else None
                    if arrays is None:
                        time.sleep(1e-4)
                        continue
                    shared["snapshot"] = trainer.train_round(arrays)

            worker = threading.Thread(target=_train_forever, daemon=True)
            worker.start()
    elif sc.controller == "node_offline":
        if sc.model_path:
            current_net = load_model(sc.model_path)
        else:
            current_net = offline_model_for(sc, cache)
        current_version = 1
    elif sc.controller == "hoacbf":
        est = AdaptiveEstimate(
            np.zeros(3),
            np.full(3, sc.hoacbf.theta_min),
            np.full(3, sc.hoacbf.theta_max),
        )
        hist = []

    t_log = np.empty(rows)
    x_log = np.empty((rows, 6))
    ud_log = np.empty((rows, 3))
    u_log = np.empty((rows, 3))
    h_log = np.empty((rows, len(sc.obstacles)))
    m_log = np.empty(rows)
    v_log = np.zeros(rows, dtype=np.int64)
    inf_log = np.zeros(rows, dtype=bool)

    blown_up = False
    note = ""
    next_train = sc.train_interval
    filled = 0
    for i in range(rows):
        t = i * sc.dt
        if mode == "concurrent" and sc.controller == "node_online":
            snap = shared["snapshot"]
            current_net, current_version = snap.net, snap.version
        elif pending is not None:
            current_net, current_version = pending
            pending = None

        ref = reference_circle(
            t, sc.reference.radius, sc.reference.height, sc.reference.omega
        )
        u_des = pid_desired_control(x, ref, sc.pid.kp, sc.pid.kd)
        if sc.controller in ("hocbf", "hocbf_no_residual"):
            res = hocbf_control(
                x, t, sc.obstacles, sc.gains, u_des, extra, sc.cbf_margin
            )
        elif sc.controller == "hoacbf":
            res = hoacbf_control(
                x, t, sc.obstacles, sc.gains, est, sc.hoacbf.y_kind, u_des,
                extra, sc.cbf_margin,
            )
        else:
            res = nodehoacbf_control(
                x, t, sc.obstacles, sc.gains, current_net, u_des,
                extra, sc.cbf_margin,
            )

        t_log[i] = t
        x_log[i] = x
        ud_log[i] = u_des
        u_log[i] = res.u
        for j, obs in enumerate(sc.obstacles):
            e = x[:3] - obs.center
            h_log[i, j] = e @ e - obs.safety_radius**2
        m_log[i] = res.margin
        v_log[i] = current_version
        inf_log[i] = res.infeasible
        filled = i + 1
        if i == n:
            break

        if not np.all(np.isfinite(res.u)):
            blown_up = True
            note = f"non-finite control at t={t:.3f}"
            break
        try:
            x_next = true_step(x, res.u, truth, t, sc.dt)
        except IntegrationError as exc:
            blown_up = True
            note = str(exc)
            break

        if queue is not None:
            with qlock:
                queue.push(Sample(t, x.copy(), res.u.copy()))
        if est is not None:
            hist.append((t, x.copy(), res.u.copy()))
            while hist[-1][0] - hist[0][0] > sc.hoacbf.history_span + 1e-9:
                hist.pop(0)
            est = hoacbf_update(
                est,
                [s[0] for s in hist],
                [s[1] for s in hist],
                [s[2] for s in hist],
                sc.hoacbf.y_kind,
                sc.hoacbf.kappa,
                sc.hoacbf.gamma,
                sc.dt,
            )
        x = x_next

        if (
            trainer is not None
            and mode == "interleaved"
            and (i + 1) * sc.dt >= next_train - 1e-9
        ):
            if len(queue) > sc.trainer.horizon + 1:
                snap = trainer.train_round(queue, trained_at=t)
                pending = (snap.net, snap.version)
            next_train += sc.train_interval

    if worker is not None:
        stop_event.set()
        worker.join(timeout=10.0)

    return TrajectoryLog(
        t=t_log[:filled],
        states=x_log[:filled],
        u_des=ud_log[:filled],
        u=u_log[:filled],
        h=h_log[:filled],
        margin=m_log[:filled],
        snapshot_version=v_log[:filled],
        infeasible=inf_log[:filled],
        obstacles=list(sc.obstacles),
        seed=sc.seed,
        blown_up=blown_up,
        note=note,
    )


def _run_cached(sc, mode, cache):
    if cache is None:
        return run_scenario(sc, mode)
    key = ("run", scenario_hash(sc), mode)
    if key not in cache:
        cache[key] = run_scenario(sc, mode, cache=cache)
    return cache[key]


def scenario_metrics(sc, mode="interleaved", cache=None):
    log = _run_cached(sc, mode, cache)
    report = compute_metrics(
        log,
        settle_exclude=sc.settle_exclude,
        wedge_sectors=WEDGE_DEFAULT if sc.wedge_filter else None,
    )
    return log, report


METRIC_KEYS = (
    "h_min",
    "h_neg",
    "avg_dist",
    "avg_sdist",
    "s_sdist_var",
    "infeasible_steps",
)


def benchmark(scenarios, trials=10, mode="interleaved", cache=None):
    """Run each scenario across ``trials`` seeds and average the metrics.

    Returns a JSON-serializable dict; with fixed seeds and interleaved
    mode the serialized output is byte-stable across invocations.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if cache is None:
        cache = {}
    table = []
    for sc in scenarios:
        per_trial = []
        for trial in range(trials):
            run_sc = replace(sc, seed=sc.seed + trial)
            log, report = scenario_metrics(run_sc, mode, cache)
            entry = dict(report.as_dict())
            entry["seed"] = run_sc.seed
            entry["blown_up"] = bool(log.blown_up)
            per_trial.append(entry)
        mean = {
            k: float(np.mean([p[k] for p in per_trial])) for k in METRIC_KEYS
        }
        table.append(
            {
                "name": sc.label,
                "controller": sc.controller,
                "residual": sc.residual.kind,
                "scenario_hash": scenario_hash(sc),
                "mean": mean,
                "per_trial": per_trial,
            }
        )
    return {"mode": mode, "trials": trials, "scenarios": table}


def benchmark_json(result):
    return json.dumps(result, sort_keys=True, indent=2) + "\n"


def default_suite(trainer=None, seed=0):
    """The benchmarking grid: every controller under each residual field
    (the no-residual baseline once, since its field is forced off)."""
    trainer = trainer or TrainerConfig()
    fields = [
        ResidualField.attractive(0.4),
        ResidualField.repulsive(0.4),
        ResidualField.time_varying(1.0),
    ]
    suite = [Scenario(controller="hocbf_no_residual", seed=seed, trainer=trainer)]
    for res in fields:
        suite.append(Scenario(controller="hocbf", residual=res, seed=seed, trainer=trainer))
        suite.append(
            Scenario(controller="hoacbf", residual=res, seed=seed, trainer=trainer)
        )
        suite.append(
            Scenario(
                controller="hoacbf",
                residual=res,
                seed=seed,
                trainer=trainer,
                hoacbf=HoAcbfConfig(y_kind="const"),
                name=f"hoacbf_const-{res.kind}",
            )
        )
        suite.append(
            Scenario(controller="node_online", residual=res, seed=seed, trainer=trainer)
        )
        suite.append(
            Scenario(controller="node_offline", residual=res, seed=seed, trainer=trainer)
        )
    return suite


def hoacbf_grid_search(
    sc, kappas, gammas, trials=1, mode="interleaved", metric="avg_sdist"
):
    """Tuning helper for the adaptive baseline: scan (kappa, gamma)
    pairs and rank by a mean metric (no claim of matching any published
    tuning)."""
    rows = []
    cache = {}
    for kappa in kappas:
        for gamma in gammas:
            cand = replace(
                sc,
                controller="hoacbf",
                hoacbf=replace(sc.hoacbf, kappa=float(kappa), gamma=float(gamma)),
            )
            result = benchmark([cand], trials=trials, mode=mode, cache=cache)
            mean = result["scenarios"][0]["mean"]
            rows.append({"kappa": float(kappa), "gamma": float(gamma), **mean})
    best = min(rows, key=lambda r: (not math.isfinite(r[metric]), r[metric]))
    return {"metric": metric, "best": best, "rows": rows}
