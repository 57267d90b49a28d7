"""Software-in-the-loop harness.

Binds the virtual plant to the cognitive twin: replays scripted disturbance
scenarios at 1 Hz, applies valve degradations, routes measurements through the
twin, and records everything alongside a frozen static model for contrast.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cognitive import (
    ACTION_OFFLINE,
    ACTION_WAIT,
    CAUSE_IDENTIFIED,
    CAUSE_UNKNOWN,
    CognitiveConfig,
    CognitiveTwin,
    DriftCondition,
    DriftEvent,
    OfflineArtifact,
    handle_drift,
    one_step_regressor,
)
from .errors import IoFailure
from .network import forward
from .plant import (
    CHANNEL_NAMES,
    PlantInputs,
    PlantParams,
    default_initial_state,
    simulate_experiment,
    step as plant_step,
)

KIND_STEP = "step"
KIND_RAMP = "ramp"

_SUBSTEPS = 10          # RK4 substeps per logged second
_INTERNAL_DT = 0.1


@dataclass(frozen=True)
class Disturbance:
    """One scripted valve degradation.

    ``magnitude`` multiplies the baseline opening: a step applies it at
    ``time_s``; a ramp walks the factor down from 1 at ``slope`` per second
    and holds once it reaches ``magnitude``.
    """

    time_s: int
    valve: int
    kind: str
    magnitude: float
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in (KIND_STEP, KIND_RAMP):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not 0 <= self.valve <= 2:
            raise ValueError("valve id must be 0, 1 or 2")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("magnitude fraction must lie in [0, 1]")
        if self.kind == KIND_RAMP and self.slope <= 0.0:
            raise ValueError("a ramp needs a positive slope")

    def factor(self, t: float) -> float:
        """Opening multiplier at scenario time ``t``."""
        if t < self.time_s:
            return 1.0
        if self.kind == KIND_STEP:
            return self.magnitude
        return max(self.magnitude, 1.0 - self.slope * (t - self.time_s))


@dataclass(frozen=True)
class ScenarioScript:
    """A replayable disturbance scenario."""

    id: str
    duration_s: int
    baseline: PlantInputs
    disturbances: tuple[Disturbance, ...]
    drift_source_identified: bool
    wait_buffer: int | None = None      # overrides the twin config when set

    def __post_init__(self):
        if self.duration_s < 1:
            raise ValueError("duration must be at least 1 s")
        for d in self.disturbances:
            if not 0 <= d.time_s <= self.duration_s:
                raise ValueError("disturbance time outside the run")
            if d.magnitude * self.baseline.v_o[d.valve] > 1.0:
                raise ValueError("disturbance pushes an opening above 1")

    def valve_openings(self, t: float) -> np.ndarray:
        v = self.baseline.v_o.copy()
        for d in self.disturbances:
            v[d.valve] = v[d.valve] * d.factor(t)
        return v

    def onset(self) -> int | None:
        times = [d.time_s for d in self.disturbances]
        return min(times) if times else None


def scenario_library() -> dict[str, ScenarioScript]:
    """The three standard valve-degradation scenarios.

    All start from the same baseline operating point and disturb one well's
    production valve at t = 2700 s: scenario 1 halves CV101 in one step
    (cause identified), scenario 2 cuts CV102 by 75% with the cause unknown
    so 5000 s of live data must be buffered, and scenario 3 ramps CV103
    continuously from fully open down to 0.4 over 5000 s (cause identified).
    """
    baseline = PlantInputs(
        Q_g=np.array([3.0, 3.0, 3.0]), v_o=np.ones(3), P_pump=2.65
    )
    return {
        "scenario1": ScenarioScript(
            id="scenario1", duration_s=10_000, baseline=baseline,
            disturbances=(Disturbance(2700, 0, KIND_STEP, 0.5),),
            drift_source_identified=True,
        ),
        "scenario2": ScenarioScript(
            id="scenario2", duration_s=12_000, baseline=baseline,
            disturbances=(Disturbance(2700, 1, KIND_STEP, 0.25),),
            drift_source_identified=False,
            wait_buffer=5000,
        ),
        "scenario3": ScenarioScript(
            id="scenario3", duration_s=10_000, baseline=baseline,
            disturbances=(Disturbance(2700, 2, KIND_RAMP, 0.4, slope=0.6 / 5000.0),),
            drift_source_identified=True,
        ),
    }


@dataclass(frozen=True)
class SilLog:
    """Complete per-step record of one scenario replay."""

    script: ScenarioScript
    config: CognitiveConfig
    seed: int
    channels: tuple[str, ...]
    t: np.ndarray               # (n,) scenario seconds, strictly increasing
    v_o: np.ndarray             # (n, 3) applied valve openings
    U: np.ndarray               # (n, 4) exogenous inputs
    truth: np.ndarray           # (n, C) plant measurements
    predicted: np.ndarray       # (n, C) twin point predictions (nan in warmup)
    lower: np.ndarray
    upper: np.ndarray
    static_pred: np.ndarray     # (n, C) frozen offline model predictions
    indicator: np.ndarray       # (n, C) ints
    Z: np.ndarray               # (n, C) ints
    monitored: np.ndarray       # (n,) bool
    events: tuple[DriftEvent, ...]

    def __post_init__(self):
        dt = np.diff(self.t)
        if len(self.t) and not (dt == 1.0).all():
            raise ValueError("log cadence must be a fixed 1 s")

    @property
    def n_steps(self) -> int:
        return len(self.t)

    def retrain_steps(self) -> tuple[int, ...]:
        return tuple(
            e.retrain_step for e in self.events if e.retrain_step is not None
        )


def _slope_rows(script: ScenarioScript, t_now: float, k: int = 8) -> np.ndarray:
    """Valve-opening rows spanning the remaining scripted drift."""
    now = script.valve_openings(t_now)
    end = script.valve_openings(script.duration_s)
    return np.linspace(now, end, k)


def run_scenario(
    script: ScenarioScript,
    artifacts: dict[str, OfflineArtifact],
    config: CognitiveConfig,
    *,
    params: PlantParams | None = None,
    seed: int = 0,
    warmup_s: float = 200.0,
    retrain_experiments: int = 40,
    retrain_hold: int = 60,
) -> SilLog:
    """Replay one scenario at 1 Hz and return the full log.

    The plant settles for ``warmup_s`` unlogged seconds at the baseline before
    scenario time starts. Identified drifts retrain immediately on data
    generated from the live plant state; unknown drifts buffer live samples
    until the wait threshold fills.
    """
    params = params if params is not None else PlantParams()
    wait_buffer = (
        script.wait_buffer if script.wait_buffer is not None else config.wait_buffer
    )
    if script.wait_buffer is not None and script.wait_buffer != config.wait_buffer:
        config = replace(config, wait_buffer=script.wait_buffer)

    settle = simulate_experiment(
        script.baseline, warmup_s, params, default_initial_state(params)
    )
    state = settle.final_state

    twin = CognitiveTwin(artifacts, config)
    channels = twin.channels
    for c in channels:
        if c not in CHANNEL_NAMES:
            raise ValueError(f"harness channels must be plant channels, got {c!r}")
    well_col = {c: CHANNEL_NAMES.index(c) for c in channels}
    statics = {c: artifacts[c] for c in channels}

    n = script.duration_s
    n_c = len(channels)
    log_t = np.arange(1.0, n + 1.0)
    log_vo = np.empty((n, 3))
    log_u = np.empty((n, 4))
    truth = np.empty((n, n_c))
    predicted = np.full((n, n_c), np.nan)
    lower = np.full((n, n_c), np.nan)
    upper = np.full((n, n_c), np.nan)
    static_pred = np.full((n, n_c), np.nan)
    indicator = np.zeros((n, n_c), dtype=int)
    z_log = np.zeros((n, n_c), dtype=int)
    monitored = np.zeros(n, dtype=bool)

    y_hist: list[np.ndarray] = []      # measured outputs, for the static model
    u_hist: list[np.ndarray] = []
    max_depth = max(
        max(a.layout.n_b, a.layout.n_a) for a in statics.values()
    )

    events: list[DriftEvent] = []
    active: DriftEvent | None = None
    u_row = np.concatenate([script.baseline.Q_g, [script.baseline.P_pump]])

    for i in range(n):
        t = float(i + 1)
        v_now = script.valve_openings(t)
        inputs = PlantInputs(
            Q_g=script.baseline.Q_g, v_o=v_now, P_pump=script.baseline.P_pump
        )
        for _ in range(_SUBSTEPS):
            state = plant_step(state, inputs, params, _INTERNAL_DT)
        y_now = np.empty(n_c)
        for j, c in enumerate(channels):
            w = well_col[c]
            y_now[j] = (state.m_g[w // 2] if w % 2 == 0 else state.m_l[w // 2])

        log_vo[i] = v_now
        log_u[i] = u_row
        truth[i] = y_now

        # frozen static model sees the same measured history as the twin
        if len(y_hist) >= max_depth:
            u_win = np.vstack([*u_hist[-(max_depth - 1):], u_row]) if max_depth > 1 \
                else u_row[None]
            for j, c in enumerate(channels):
                art = statics[c]
                y_win = np.array([h[j] for h in y_hist[-art.layout.n_b:]])
                x = one_step_regressor(art.layout, y_win, u_win)
                xn = art.norm.normalize_regressors(x[None], art.layout)
                pn = float(forward(art.map_theta, art.spec, xn)[0])
                static_pred[i, j] = float(
                    art.norm.denormalize_target(np.array([pn]))[0]
                )
        y_hist.append(y_now)
        u_hist.append(u_row)

        r = twin.step(u_row, y_now)
        predicted[i] = r.predicted
        lower[i] = r.lower
        upper[i] = r.upper
        indicator[i] = r.indicator
        z_log[i] = r.Z
        monitored[i] = r.monitored

        if r.trigger and active is None:
            t_step = int(t)
            if script.drift_source_identified:
                condition = DriftCondition(
                    params=params, initial=state,
                    v_o_rows=_slope_rows(script, t),
                )
                data = handle_drift(
                    CAUSE_IDENTIFIED, condition=condition,
                    n_experiments=retrain_experiments, hold=retrain_hold,
                    seed=seed + len(events) + 1,
                )
                twin.retrain(data, seed=seed + len(events) + 1)
                events.append(DriftEvent(
                    t_step, CAUSE_IDENTIFIED, ACTION_OFFLINE,
                    retrain_step=t_step, post_retrain_z=twin.max_z(),
                ))
            else:
                twin.begin_buffering()
                active = DriftEvent(t_step, CAUSE_UNKNOWN, ACTION_WAIT)
        elif active is not None and twin.buffer_size >= wait_buffer:
            data = handle_drift(
                CAUSE_UNKNOWN, buffered=twin.buffer_data(),
                wait_buffer=wait_buffer,
            )
            twin.retrain(data, seed=seed + len(events) + 1)
            events.append(replace(
                active, retrain_step=int(t), post_retrain_z=twin.max_z(),
            ))
            active = None

    if active is not None:
        events.append(active)       # truncated: run ended while waiting

    return SilLog(
        script=script, config=config, seed=seed, channels=channels,
        t=log_t, v_o=log_vo, U=log_u, truth=truth, predicted=predicted,
        lower=lower, upper=upper, static_pred=static_pred,
        indicator=indicator, Z=z_log, monitored=monitored,
        events=tuple(events),
    )


@dataclass(frozen=True)
class ChannelComparison:
    pre_mse_static: float
    pre_mse_twin: float
    post_mse_static: float
    post_mse_twin: float
    pre_violation_fraction: float
    post_violation_fraction: float


@dataclass(frozen=True)
class SilComparison:
    """Static-vs-adaptive drift metrics for one replay."""

    per_channel: dict[str, ChannelComparison]
    onset_step: int | None
    detection_step: int | None
    retrain_step: int | None
    time_to_trigger: int | None
    time_to_recovery: int | None
    pre_violation_fraction: float       # MH window before the first retrain
    post_violation_fraction: float      # MH window after it
    n_retrains: int


def _window_fraction(indicator: np.ndarray, monitored: np.ndarray,
                     rows: np.ndarray) -> float:
    rows = rows[monitored[rows]]
    if len(rows) == 0:
        return 0.0
    return float(indicator[rows].mean())


def compare_static_vs_dt(log: SilLog) -> SilComparison:
    """Error and violation metrics contrasting the frozen model with the twin.

    Pre/post MSE splits at the disturbance onset; violation fractions compare
    the MH-step windows each side of the first retrain.
    """
    onset = log.script.onset()
    events = [e for e in log.events]
    detection = events[0].detection_step if events else None
    retrains = log.retrain_steps()
    retrain = retrains[0] if retrains else None
    mh = log.config.mh

    rows_ok = log.monitored & np.isfinite(log.static_pred).all(axis=1)
    idx = np.arange(log.n_steps)
    step_of_row = log.t.astype(int)
    if onset is None:
        pre_rows = idx[rows_ok]
        post_rows = idx[:0]
    else:
        pre_rows = idx[rows_ok & (step_of_row < onset)]
        post_rows = idx[rows_ok & (step_of_row >= onset)]

    per_channel: dict[str, ChannelComparison] = {}
    for j, c in enumerate(log.channels):
        def mse(rows, pred):
            if len(rows) == 0:
                return float("nan")
            d = pred[rows, j] - log.truth[rows, j]
            return float(np.mean(d * d))

        if retrain is None:
            pre_w = idx[:0]
            post_w = idx[:0]
        else:
            r = retrain - 1        # row index of the retrain step
            pre_w = idx[max(0, r - mh + 1): r + 1]
            post_w = idx[r + 1: r + 1 + mh]
        per_channel[c] = ChannelComparison(
            pre_mse_static=mse(pre_rows, log.static_pred),
            pre_mse_twin=mse(pre_rows, log.predicted),
            post_mse_static=mse(post_rows, log.static_pred),
            post_mse_twin=mse(post_rows, log.predicted),
            pre_violation_fraction=_window_fraction(
                log.indicator[:, j], log.monitored, pre_w),
            post_violation_fraction=_window_fraction(
                log.indicator[:, j], log.monitored, post_w),
        )

    if retrain is None:
        pre_f = post_f = 0.0
    else:
        r = retrain - 1
        pre_w = idx[max(0, r - mh + 1): r + 1]
        post_w = idx[r + 1: r + 1 + mh]
        joint = log.indicator.mean(axis=1)
        pre_f = _window_fraction(joint, log.monitored, pre_w)
        post_f = _window_fraction(joint, log.monitored, post_w)

    return SilComparison(
        per_channel=per_channel,
        onset_step=onset,
        detection_step=detection,
        retrain_step=retrain,
        time_to_trigger=(
            detection - onset
            if detection is not None and onset is not None else None
        ),
        time_to_recovery=(
            retrain - detection
            if retrain is not None and detection is not None else None
        ),
        pre_violation_fraction=pre_f,
        post_violation_fraction=post_f,
        n_retrains=len(retrains),
    )


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonsafe(x):
    """Finite floats pass through; non-finite ones become null."""
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, dict):
        return {k: _jsonsafe(v) for k, v in x.items()}
    return x


def emit_report(log: SilLog, out_dir: str | Path) -> list[Path]:
    """Write channel CSVs, an event log and a summary to ``out_dir``.

    Output is byte-stable for a given log: fixed column order, full-precision
    decimal floats, sorted JSON keys and no timestamps, so re-emitting the
    same log is idempotent.
    """
    out = Path(out_dir)
    try:
        (out / "channels").mkdir(parents=True, exist_ok=True)
        written: list[Path] = []

        header = "t,measured,predicted,lower,upper,static,indicator,Z\n"
        for j, c in enumerate(log.channels):
            path = out / "channels" / f"{c}.csv"
            lines = [header]
            for i in range(log.n_steps):
                lines.append(",".join([
                    _fmt(log.t[i]), _fmt(log.truth[i, j]),
                    _fmt(log.predicted[i, j]), _fmt(log.lower[i, j]),
                    _fmt(log.upper[i, j]), _fmt(log.static_pred[i, j]),
                    str(int(log.indicator[i, j])), str(int(log.Z[i, j])),
                ]) + "\n")
            path.write_text("".join(lines))
            written.append(path)

        events_path = out / "events.jsonl"
        ev_lines = []
        for e in log.events:
            ev_lines.append(json.dumps({
                "detection_step": e.detection_step,
                "cause": e.cause,
                "action": e.action,
                "retrain_step": e.retrain_step,
                "post_retrain_z": e.post_retrain_z,
                "status": "completed" if e.retrain_step is not None else "truncated",
            }, sort_keys=True) + "\n")
        events_path.write_text("".join(ev_lines))
        written.append(events_path)

        comparison = compare_static_vs_dt(log) if log.n_steps else None
        summary = {
            "scenario": log.script.id,
            "duration_s": log.script.duration_s,
            "seed": log.seed,
            "channels": list(log.channels),
            "config": {
                "mh": log.config.mh, "a_offset": log.config.a_offset,
                "ct": log.config.ct, "confidence": log.config.confidence,
                "wait_buffer": log.config.wait_buffer,
                "retrain_epochs": log.config.retrain_epochs,
                "retrain_lr_factor": log.config.retrain_lr_factor,
            },
            "n_events": len(log.events),
            "n_retrains": len(log.retrain_steps()),
            "metrics": None if comparison is None else {
                "onset_step": comparison.onset_step,
                "detection_step": comparison.detection_step,
                "retrain_step": comparison.retrain_step,
                "time_to_trigger": comparison.time_to_trigger,
                "time_to_recovery": comparison.time_to_recovery,
                "pre_violation_fraction": comparison.pre_violation_fraction,
                "post_violation_fraction": comparison.post_violation_fraction,
                "per_channel": {
                    c: _jsonsafe({
                        "pre_mse_static": m.pre_mse_static,
                        "pre_mse_twin": m.pre_mse_twin,
                        "post_mse_static": m.post_mse_static,
                        "post_mse_twin": m.post_mse_twin,
                        "pre_violation_fraction": m.pre_violation_fraction,
                        "post_violation_fraction": m.post_violation_fraction,
                    })
                    for c, m in comparison.per_channel.items()
                },
            },
        }
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        written.append(summary_path)
        return written
    except OSError as exc:
        raise IoFailure(f"could not write report under {out}: {exc}") from exc


def log_to_dict(log: SilLog) -> dict:
    """JSON-ready rendering of a log; floats round-trip exactly."""
    s = log.script
    return {
        "script": {
            "id": s.id,
            "duration_s": s.duration_s,
            "baseline": {
                "Q_g": s.baseline.Q_g.tolist(),
                "v_o": s.baseline.v_o.tolist(),
                "P_pump": s.baseline.P_pump,
            },
            "disturbances": [
                {"time_s": d.time_s, "valve": d.valve, "kind": d.kind,
                 "magnitude": d.magnitude, "slope": d.slope}
                for d in s.disturbances
            ],
            "drift_source_identified": s.drift_source_identified,
            "wait_buffer": s.wait_buffer,
        },
        "config": {
            "mh": log.config.mh, "a_offset": log.config.a_offset,
            "ct": log.config.ct, "confidence": log.config.confidence,
            "wait_buffer": log.config.wait_buffer,
            "retrain_epochs": log.config.retrain_epochs,
            "retrain_lr_factor": log.config.retrain_lr_factor,
        },
        "seed": log.seed,
        "channels": list(log.channels),
        "t": log.t.tolist(),
        "v_o": log.v_o.tolist(),
        "U": log.U.tolist(),
        "truth": log.truth.tolist(),
        "predicted": log.predicted.tolist(),
        "lower": log.lower.tolist(),
        "upper": log.upper.tolist(),
        "static_pred": log.static_pred.tolist(),
        "indicator": log.indicator.tolist(),
        "Z": log.Z.tolist(),
        "monitored": log.monitored.tolist(),
        "events": [
            {"detection_step": e.detection_step, "cause": e.cause,
             "action": e.action, "retrain_step": e.retrain_step,
             "post_retrain_z": e.post_retrain_z}
            for e in log.events
        ],
    }


def log_from_dict(d: dict) -> SilLog:
    s = d["script"]
    script = ScenarioScript(
        id=s["id"],
        duration_s=s["duration_s"],
        baseline=PlantInputs(
            Q_g=np.array(s["baseline"]["Q_g"]),
            v_o=np.array(s["baseline"]["v_o"]),
            P_pump=s["baseline"]["P_pump"],
        ),
        disturbances=tuple(Disturbance(**e) for e in s["disturbances"]),
        drift_source_identified=s["drift_source_identified"],
        wait_buffer=s["wait_buffer"],
    )
    return SilLog(
        script=script,
        config=CognitiveConfig(**d["config"]),
        seed=d["seed"],
        channels=tuple(d["channels"]),
        t=np.array(d["t"], dtype=float),
        v_o=np.array(d["v_o"], dtype=float),
        U=np.array(d["U"], dtype=float),
        truth=np.array(d["truth"], dtype=float),
        predicted=np.array(d["predicted"], dtype=float),
        lower=np.array(d["lower"], dtype=float),
        upper=np.array(d["upper"], dtype=float),
        static_pred=np.array(d["static_pred"], dtype=float),
        indicator=np.array(d["indicator"], dtype=int),
        Z=np.array(d["Z"], dtype=int),
        monitored=np.array(d["monitored"], dtype=bool),
        events=tuple(DriftEvent(**e) for e in d["events"]),
    )
