"""Online cognitive twin.

Warm-starts per-channel models from offline artifacts, monitors one-step-ahead
coverage of live measurements over a moving horizon, and retrains the ensemble
when the violation count crosses the cognitive threshold. Two drift-response
paths exist: when the drift source is identified, fresh training data is
generated at the current plant condition; when it is unknown, live samples are
buffered until enough are available.
"""

from __future__ import annotations

import hashlib
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .doe import TABLE_BOUNDS, build_input_sequence, lhs_sample
from .errors import (
    ArtifactMismatch,
    DivergedLoss,
    InsufficientSamples,
    InvalidRegion,
    MemberDroppedWarning,
    OfflineInstanceUnavailable,
    ShapeMismatch,
)
from .network import NetworkSpec, NetworkWeights, forward, train
from .plant import CHANNEL_NAMES, PlantParams, PlantState, simulate_schedule
from .structure import NarxLayout, NormalizationSpec, build_lag_matrix, split_rows

DEFAULT_MH = 100
DEFAULT_A_OFFSET = 1
DEFAULT_CT = 5
DEFAULT_CONFIDENCE = 0.95
DEFAULT_WAIT_BUFFER = 5000
DEFAULT_RETRAIN_EPOCHS = 50
DEFAULT_RETRAIN_LR_FACTOR = 0.1

CAUSE_IDENTIFIED = "source-identified"
CAUSE_UNKNOWN = "source-unknown"
ACTION_OFFLINE = "request-offline-data"
ACTION_WAIT = "wait-and-collect"


@dataclass(frozen=True)
class CognitiveConfig:
    """Monitoring and retraining knobs shared by all channels.

    ``a_offset`` shifts the violation window: with the default 1 the window
    ends at the newest sample; larger values leave the most recent
    ``a_offset - 1`` indicators outside the count.
    """

    mh: int = DEFAULT_MH
    a_offset: int = DEFAULT_A_OFFSET
    ct: int = DEFAULT_CT
    confidence: float = DEFAULT_CONFIDENCE
    wait_buffer: int = DEFAULT_WAIT_BUFFER
    retrain_epochs: int = DEFAULT_RETRAIN_EPOCHS
    retrain_lr_factor: float = DEFAULT_RETRAIN_LR_FACTOR

    def __post_init__(self):
        if self.mh < 1:
            raise ValueError("mh must be at least 1")
        if self.a_offset < 0:
            raise ValueError("a_offset must be non-negative")
        if not 1 <= self.ct <= self.mh:
            raise ValueError("ct must lie in [1, mh]")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.wait_buffer < 0:
            raise ValueError("wait_buffer must be non-negative")
        if self.retrain_epochs < 1:
            raise ValueError("retrain_epochs must be at least 1")
        if self.retrain_lr_factor <= 0.0:
            raise ValueError("retrain_lr_factor must be positive")


def artifact_fingerprint(
    spec: NetworkSpec,
    layout: NarxLayout,
    norm: NormalizationSpec,
    map_theta: np.ndarray,
    members: np.ndarray,
) -> str:
    """sha256 over a canonical byte encoding of one channel's offline result."""
    h = hashlib.sha256()
    header = repr((
        tuple(spec.layer_sizes), tuple(spec.activations), spec.learning_rate,
        spec.batch_size, spec.epochs, spec.seed,
        (layout.n_b, layout.n_a, layout.n_u),
        norm.y_min, norm.y_max,
    ))
    h.update(header.encode("ascii"))
    for arr in (norm.u_min, norm.u_max, map_theta, members):
        a = np.ascontiguousarray(np.asarray(arr, dtype=float))
        h.update(repr(a.shape).encode("ascii"))
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class OfflineArtifact:
    """Everything the online twin needs for one output channel."""

    channel: str
    spec: NetworkSpec
    layout: NarxLayout
    norm: NormalizationSpec
    map_theta: np.ndarray        # (n_params,)
    members: np.ndarray          # (m, n_params) reduced ensemble
    fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "map_theta", np.asarray(self.map_theta, dtype=float))
        members = np.atleast_2d(np.asarray(self.members, dtype=float))
        object.__setattr__(self, "members", members)
        if self.map_theta.shape != (self.spec.n_params,):
            raise ShapeMismatch("map_theta does not match the network spec")
        if members.shape[1] != self.spec.n_params:
            raise ShapeMismatch("ensemble member width does not match the spec")
        if self.spec.n_inputs != self.layout.width:
            raise ShapeMismatch("network input width does not match the lag layout")

    def verify(self) -> None:
        expected = artifact_fingerprint(
            self.spec, self.layout, self.norm, self.map_theta, self.members
        )
        if expected != self.fingerprint:
            raise ArtifactMismatch(
                f"artifact for {self.channel} failed its fingerprint check"
            )


def make_artifact(
    channel: str,
    spec: NetworkSpec,
    layout: NarxLayout,
    norm: NormalizationSpec,
    map_theta: np.ndarray,
    members: np.ndarray,
) -> OfflineArtifact:
    fp = artifact_fingerprint(spec, layout, norm, map_theta, members)
    return OfflineArtifact(
        channel=channel, spec=spec, layout=layout, norm=norm,
        map_theta=np.asarray(map_theta, dtype=float),
        members=np.atleast_2d(np.asarray(members, dtype=float)),
        fingerprint=fp,
    )


def one_step_regressor(
    layout: NarxLayout, y_window: np.ndarray, u_window: np.ndarray
) -> np.ndarray:
    """Single regressor row in engineering units.

    ``y_window`` holds past measurements in chronological order (newest last);
    ``u_window`` rows are chronological with the current input sample last,
    since the held input on a row is the one driving the step into it.
    """
    y_window = np.asarray(y_window, dtype=float).ravel()
    u_window = np.atleast_2d(np.asarray(u_window, dtype=float))
    if len(y_window) < layout.n_b:
        raise ShapeMismatch(f"need {layout.n_b} past outputs, got {len(y_window)}")
    if u_window.shape[0] < layout.n_a or u_window.shape[1] != layout.n_u:
        raise ShapeMismatch(
            f"need {layout.n_a} rows of {layout.n_u} inputs, got {u_window.shape}"
        )
    ylags = y_window[::-1][: layout.n_b]
    ublock = u_window[::-1][: layout.n_a]       # (n_a, n_u), current sample first
    return np.concatenate([ylags, ublock.T.reshape(-1)])


class OnlineChannelModel:
    """Mutable per-channel model: point weights plus the reduced ensemble."""

    def __init__(self, artifact: OfflineArtifact):
        self.channel = artifact.channel
        self.spec = artifact.spec
        self.layout = artifact.layout
        self.norm = artifact.norm
        self.theta = artifact.map_theta.copy()
        self.members = artifact.members.copy()

    @property
    def n_members(self) -> int:
        return self.members.shape[0]

    def predict(
        self, y_window: np.ndarray, u_window: np.ndarray, confidence: float
    ) -> tuple[float, float, float]:
        """One-step-ahead point prediction and coverage interval, both in
        engineering units."""
        if not 0.0 < confidence < 1.0:
            raise InvalidRegion("confidence must lie in (0, 1)")
        x = one_step_regressor(self.layout, y_window, u_window)
        xn = self.norm.normalize_regressors(x[None], self.layout)
        with np.errstate(over="ignore", invalid="ignore"):
            point_n = float(forward(self.theta, self.spec, xn)[0])
            preds_n = np.asarray(forward(self.members, self.spec, xn)).ravel()
        finite = np.isfinite(preds_n)
        if not finite.all():
            warnings.warn(
                f"{int((~finite).sum())} non-finite member prediction(s) dropped "
                f"on {self.channel}",
                MemberDroppedWarning, stacklevel=2,
            )
            preds_n = preds_n[finite]
        if not np.isfinite(point_n) or preds_n.size == 0:
            raise InvalidRegion(f"no finite predictions available on {self.channel}")
        alpha = (1.0 - confidence) / 2.0
        lo_n, hi_n = np.quantile(preds_n, [alpha, 1.0 - alpha])
        point = float(self.norm.denormalize_target(np.array([point_n]))[0])
        lo = float(self.norm.denormalize_target(np.array([lo_n]))[0])
        hi = float(self.norm.denormalize_target(np.array([hi_n]))[0])
        return point, lo, hi


def transfer_warm_start(artifact: OfflineArtifact) -> OnlineChannelModel:
    """Copy the offline structure, weights and ensemble verbatim after
    verifying the artifact fingerprint."""
    artifact.verify()
    return OnlineChannelModel(artifact)


def violation_indicator(measured: float, region_inf: float, region_sup: float) -> int:
    """0 iff the measurement lies inside [inf, sup] (boundary inclusive)."""
    if region_inf > region_sup:
        raise InvalidRegion(f"inverted region [{region_inf}, {region_sup}]")
    return 0 if region_inf <= measured <= region_sup else 1


class CognitiveState:
    """Sliding violation window for one channel.

    Z is maintained incrementally as indicators enter and leave the window;
    ``window()`` exposes the buffered contents so tests can recount it.
    """

    def __init__(self, config: CognitiveConfig):
        self.config = config
        self._window: deque[int] = deque(maxlen=config.mh)
        self._pending: deque[int] = deque()
        self.Z = 0
        self.k = 0
        self.triggered = False

    def window(self) -> tuple[int, ...]:
        return tuple(self._window)


def cognitive_update(
    state: CognitiveState, indicator: int
) -> tuple[CognitiveState, int, bool]:
    """Push one indicator, advance the window and report the trigger flag."""
    ind = int(indicator)
    if ind not in (0, 1):
        raise ValueError("indicator must be 0 or 1")
    cfg = state.config
    state.k += 1
    state._pending.append(ind)
    delay = max(0, cfg.a_offset - 1)
    if len(state._pending) > delay:
        entering = state._pending.popleft()
        evicted = state._window[0] if len(state._window) == cfg.mh else 0
        state._window.append(entering)
        state.Z += entering - evicted
    trigger = state.Z >= cfg.ct
    if trigger:
        state.triggered = True
    return state, state.Z, trigger


@dataclass(frozen=True)
class DriftEvent:
    """One detected drift episode from trigger to retrain completion."""

    detection_step: int
    cause: str
    action: str
    retrain_step: int | None = None
    post_retrain_z: int | None = None

    def __post_init__(self):
        if self.cause not in (CAUSE_IDENTIFIED, CAUSE_UNKNOWN):
            raise ValueError(f"unknown drift cause {self.cause!r}")
        if self.action not in (ACTION_OFFLINE, ACTION_WAIT):
            raise ValueError(f"unknown drift action {self.action!r}")
        if self.retrain_step is not None and self.retrain_step < self.detection_step:
            raise ValueError("retrain step cannot precede detection")


@dataclass(frozen=True)
class DriftCondition:
    """Plant condition(s) at which fresh training data should be generated.

    ``v_o_rows`` lists valve-opening combinations to cycle across the new
    experiment plateaus; a drifting valve contributes several openings along
    its slope, a stepped one a single row.
    """

    params: PlantParams
    initial: PlantState
    v_o_rows: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.v_o_rows, dtype=float))
        if rows.shape[1] != 3 or rows.shape[0] < 1:
            raise ValueError("v_o_rows must be (k, 3) with k >= 1")
        if rows.min() < 0.0 or rows.max() > 1.0:
            raise ValueError("valve openings must lie in [0, 1]")
        object.__setattr__(self, "v_o_rows", rows)


@dataclass(frozen=True)
class RetrainData:
    """Rows of plant output/input samples to fine-tune on. ``hold`` is the
    plateau length for generated schedules and None for live streams."""

    Y: np.ndarray                # (rows, n_channels)
    U: np.ndarray                # (rows, n_inputs)
    hold: int | None
    channels: tuple[str, ...] = CHANNEL_NAMES

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "U", U)
        if Y.shape[0] != U.shape[0]:
            raise ShapeMismatch("output and input row counts differ")
        if Y.shape[1] != len(self.channels):
            raise ShapeMismatch("one output column per channel required")

    @property
    def n_rows(self) -> int:
        return self.Y.shape[0]


def request_offline_data(
    condition: DriftCondition,
    *,
    n_experiments: int = 40,
    hold: int = 60,
    seed: int = 0,
    bounds=TABLE_BOUNDS,
) -> RetrainData:
    """Fresh stratified experiment batch simulated at the drifted condition.

    The schedule starts from the supplied plant state (the system's current
    state when the harness requests data) and cycles the condition's valve
    rows across plateaus.
    """
    plan = lhs_sample(n_experiments, bounds, seed)
    sched = build_input_sequence(plan, float(hold))
    v_rows = np.resize(condition.v_o_rows, (n_experiments, 3))
    traj = simulate_schedule(
        sched.Q_g, v_rows, sched.P_pump, sched.hold, condition.params,
        condition.initial,
    )
    return RetrainData(Y=traj.states_matrix(), U=traj.inputs_matrix(), hold=int(hold))


def handle_drift(
    cause: str,
    *,
    condition: DriftCondition | None = None,
    buffered: RetrainData | None = None,
    wait_buffer: int = DEFAULT_WAIT_BUFFER,
    n_experiments: int = 40,
    hold: int = 60,
    seed: int = 0,
    bounds=TABLE_BOUNDS,
) -> RetrainData | None:
    """Resolve a trigger into retraining data.

    Identified sources get a fresh generated batch immediately and require
    plant access through ``condition``. Unknown sources return None until the
    live buffer holds ``wait_buffer`` rows.
    """
    if cause == CAUSE_IDENTIFIED:
        if condition is None:
            raise OfflineInstanceUnavailable(
                "identified drift needs plant access to generate data"
            )
        return request_offline_data(
            condition, n_experiments=n_experiments, hold=hold, seed=seed,
            bounds=bounds,
        )
    if cause == CAUSE_UNKNOWN:
        if buffered is None or buffered.n_rows < wait_buffer:
            return None
        return buffered
    raise ValueError(f"unknown drift cause {cause!r}")


def online_retrain(
    model: OnlineChannelModel,
    data: RetrainData,
    *,
    epochs: int = DEFAULT_RETRAIN_EPOCHS,
    lr_factor: float = DEFAULT_RETRAIN_LR_FACTOR,
    seed: int = 0,
) -> OnlineChannelModel:
    """Fine-tune the point weights and every ensemble member on new data.

    Each member is warm-started from its current parameters and trained toward
    the new targets shifted by its own prediction offset from the point
    weights. Training every member toward the raw targets would drive them all
    into the same optimum and collapse the coverage interval to zero width;
    the shifted targets make each member re-learn the new dynamics while
    keeping its role as a distinct posterior draw, so the ensemble spread
    survives retraining. A member whose fine-tune diverges is reset to the
    fine-tuned point weights. Normalization widens only when the new data
    falls outside the fitted ranges.
    """
    if model.channel not in data.channels:
        raise ShapeMismatch(f"data carries no channel {model.channel!r}")
    col = data.channels.index(model.channel)
    y = data.Y[:, col]
    X_raw, t_raw, _ = build_lag_matrix(y, data.U, model.layout, data.hold)
    if len(t_raw) < 2 * model.spec.batch_size:
        raise InsufficientSamples(
            f"{len(t_raw)} usable rows is too few to fine-tune on"
        )
    if not model.norm.covers(y, data.U):
        model.norm = model.norm.expanded(y, data.U)
    Xn = model.norm.normalize_regressors(X_raw, model.layout)
    tn = model.norm.normalize_target(t_raw)
    tr, va, _ = split_rows(len(tn), (0.85, 0.15, 0.0), seed)
    lr = model.spec.learning_rate * lr_factor

    def fine_tune(theta0: np.ndarray, targets: np.ndarray) -> np.ndarray | None:
        start = NetworkWeights(theta=theta0.copy(), layer_sizes=model.spec.layer_sizes)
        try:
            res = train(
                model.spec, Xn[tr], targets[tr], Xn[va], targets[va],
                initial=start, epochs=epochs, learning_rate=lr,
            )
        except DivergedLoss:
            return None
        return res.weights.theta

    theta_before = model.theta.copy()
    tuned_map = fine_tune(theta_before, tn)
    if tuned_map is None:
        tuned_map = theta_before
    with np.errstate(over="ignore", invalid="ignore"):
        base_pred = np.asarray(forward(theta_before, model.spec, Xn)).ravel()
        member_pred = np.asarray(forward(model.members, model.spec, Xn))
    new_members = np.empty_like(model.members)
    for i in range(model.n_members):
        offset = member_pred[i] - base_pred
        if not np.isfinite(offset).all():
            new_members[i] = tuned_map
            continue
        tuned = fine_tune(model.members[i], tn + offset)
        new_members[i] = tuned_map if tuned is None else tuned
    model.theta = tuned_map
    model.members = new_members
    return model


@dataclass(frozen=True)
class StepResult:
    """Per-step monitoring outcome across all channels."""

    step: int
    monitored: bool
    predicted: np.ndarray       # (n_channels,), nan while warming up
    lower: np.ndarray
    upper: np.ndarray
    indicator: np.ndarray       # (n_channels,) ints
    Z: np.ndarray               # (n_channels,) ints
    trigger: bool


class CognitiveTwin:
    """Per-channel online models sharing one cognitive configuration.

    ``step`` consumes the input sample driving the current plant step and the
    resulting measurement: predictions for the step are made before the
    measurement enters the history, so the twin only ever uses the past. The
    twin triggers when any channel's violation count reaches the threshold.
    """

    def __init__(self, artifacts: dict[str, OfflineArtifact], config: CognitiveConfig):
        if not artifacts:
            raise ValueError("at least one channel artifact required")
        self.config = config
        self.channels = tuple(artifacts)
        self.models = {c: transfer_warm_start(a) for c, a in artifacts.items()}
        self.states = {c: CognitiveState(config) for c in self.channels}
        n_u = {self.models[c].layout.n_u for c in self.channels}
        if len(n_u) != 1:
            raise ShapeMismatch("channels disagree on the exogenous input count")
        self.n_inputs = n_u.pop()
        self._y_depth = max(self.models[c].layout.n_b for c in self.channels)
        u_depth = max(self.models[c].layout.n_a for c in self.channels) - 1
        self._y_hist: deque[np.ndarray] = deque(maxlen=self._y_depth)
        self._u_hist: deque[np.ndarray] = deque(maxlen=u_depth)
        self._u_depth = u_depth
        self._k = 0
        self._buffering = False
        self._buffer_y: list[np.ndarray] = []
        self._buffer_u: list[np.ndarray] = []

    @property
    def warmed_up(self) -> bool:
        return (
            len(self._y_hist) >= self._y_depth
            and len(self._u_hist) >= self._u_depth
        )

    @property
    def step_count(self) -> int:
        return self._k

    def max_z(self) -> int:
        return max(self.states[c].Z for c in self.channels)

    def step(self, u_now: np.ndarray, y_now: np.ndarray) -> StepResult:
        u_now = np.asarray(u_now, dtype=float).ravel()
        y_now = np.asarray(y_now, dtype=float).ravel()
        if u_now.shape != (self.n_inputs,):
            raise ShapeMismatch(f"expected {self.n_inputs} inputs, got {u_now.shape}")
        if y_now.shape != (len(self.channels),):
            raise ShapeMismatch(
                f"expected {len(self.channels)} measurements, got {y_now.shape}"
            )
        self._k += 1
        n_c = len(self.channels)
        predicted = np.full(n_c, np.nan)
        lower = np.full(n_c, np.nan)
        upper = np.full(n_c, np.nan)
        indicator = np.zeros(n_c, dtype=int)
        z = np.zeros(n_c, dtype=int)
        trigger = False
        monitored = self.warmed_up
        if monitored:
            u_win = np.vstack([*self._u_hist, u_now]) if self._u_depth else u_now[None]
            y_hist = np.stack(self._y_hist)         # (depth, n_channels)
            for i, c in enumerate(self.channels):
                model = self.models[c]
                point, lo, hi = model.predict(
                    y_hist[:, i], u_win, self.config.confidence
                )
                predicted[i], lower[i], upper[i] = point, lo, hi
                indicator[i] = violation_indicator(y_now[i], lo, hi)
                _, z_i, trig = cognitive_update(self.states[c], indicator[i])
                z[i] = z_i
                trigger = trigger or trig
        else:
            for i, c in enumerate(self.channels):
                z[i] = self.states[c].Z
        self._y_hist.append(y_now.copy())
        self._u_hist.append(u_now.copy())
        if self._buffering:
            self._buffer_y.append(y_now.copy())
            self._buffer_u.append(u_now.copy())
        return StepResult(
            step=self._k, monitored=monitored, predicted=predicted,
            lower=lower, upper=upper, indicator=indicator, Z=z, trigger=trigger,
        )

    def begin_buffering(self) -> None:
        self._buffering = True

    @property
    def buffer_size(self) -> int:
        return len(self._buffer_y)

    def buffer_data(self) -> RetrainData:
        if not self._buffer_y:
            raise InsufficientSamples("live buffer is empty")
        return RetrainData(
            Y=np.stack(self._buffer_y), U=np.stack(self._buffer_u), hold=None,
            channels=self.channels,
        )

    def retrain(self, data: RetrainData, *, seed: int = 0) -> None:
        """Fine-tune every channel, then reset monitors and the live buffer.

        Called between steps, so the updated ensemble takes over at the next
        step boundary; measurement history is kept, predictions continue
        seamlessly.
        """
        for c in self.channels:
            online_retrain(
                self.models[c], data,
                epochs=self.config.retrain_epochs,
                lr_factor=self.config.retrain_lr_factor,
                seed=seed,
            )
        self.states = {c: CognitiveState(self.config) for c in self.channels}
        self._buffering = False
        self._buffer_y.clear()
        self._buffer_u.clear()
