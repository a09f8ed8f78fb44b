"""Launch-spectrum pre-emphasis by policy-gradient reinforcement learning.

The action space has 128 entries: bit ``b`` of the action index boosts
sub-band ``b`` by 0.5 dB, after which a uniform offset restores the original
total launch power. Reward is the change in end-to-end capacity.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import edfa, nn
from .exceptions import GFFInfeasibleError, UsageError
from .grid import C_BAND, ChannelGrid, total_dbm
from .kernels import mlp_forward
from .link import LaunchProfile, LinkDesign, PatternRunner, propagate_full
from .perf import NliParams, SnrReport, capacity_tbps, evaluate, nli_power_central, snr_per_channel

log = logging.getLogger(__name__)

BAND_SIZES = (13, 13, 13, 13, 13, 12, 12)
N_ACTIONS = 2 ** len(BAND_SIZES)
STEP_DB = 0.5
TOP_RANGE_DBM = (16.0, 18.0)
INFEASIBLE_PENALTY_TBPS = -1.0


def band_index(grid: ChannelGrid = C_BAND) -> np.ndarray:
    """Sub-band number of every channel (0 = shortest wavelengths)."""
    if sum(BAND_SIZES) != grid.n_channels:
        raise UsageError(f"sub-bands cover {sum(BAND_SIZES)} channels, grid has {grid.n_channels}")
    return np.repeat(np.arange(len(BAND_SIZES)), BAND_SIZES)


def action_masks(grid: ChannelGrid = C_BAND) -> np.ndarray:
    """(128, n_channels) boolean matrix: which channels each action boosts."""
    bits = (np.arange(N_ACTIONS)[:, None] >> np.arange(len(BAND_SIZES))[None, :]) & 1
    return bits[:, band_index(grid)].astype(bool)


_MASKS = action_masks()


def apply_action(p: LaunchProfile, action: int) -> LaunchProfile:
    if not 0 <= action < N_ACTIONS:
        raise UsageError(f"action must be in [0, {N_ACTIONS}), got {action}")
    boosted = p.power_dbm + STEP_DB * _MASKS[action]
    return LaunchProfile(boosted - (total_dbm(boosted) - total_dbm(p.power_dbm)))


def random_spectrum(rng: np.random.Generator, grid: ChannelGrid = C_BAND) -> LaunchProfile:
    shape = edfa.smooth_shapes(rng, 1, grid)[0]
    return LaunchProfile(edfa.set_total(shape, rng.uniform(*TOP_RANGE_DBM)))


@dataclass
class StepResult:
    capacity_tbps: float  # nan when the GFF cannot restore the spectrum
    mean_gain_db: float

    @property
    def feasible(self) -> bool:
        return not np.isnan(self.capacity_tbps)


class LinkEnv:
    """Capacity evaluator and transition function for one link design.

    ``step`` is pure: the same (spectrum, action) always yields the same
    result. The episode step cap is enforced by :func:`run_episode`.
    """

    def __init__(self, design: LinkDesign, model: edfa.SurrogateModel, nf_db: float,
                 params: NliParams | None = None, mode: str = "extrapolated",
                 gain_window_db: tuple[float, float] = (9.5, 10.5)):
        self.design = design
        self.model = model
        self.nf_db = nf_db
        self.params = params or NliParams()
        self.mode = mode
        self.gain_window_db = gain_window_db
        self.runner = PatternRunner(design, model, nf_db, grid=self.params.grid)
        self.evaluations = 0
        self._cache: dict[bytes, StepResult] = {}

    def evaluate(self, p: LaunchProfile) -> StepResult:
        key = p.power_dbm.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        self.evaluations += 1
        res = self._evaluate(p)
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = res
        return res

    def _evaluate(self, p: LaunchProfile) -> StepResult:
        try:
            state = propagate_full(p, self.design, self.model, self.nf_db, mode=self.mode,
                                   grid=self.params.grid, runner=self.runner)
        except GFFInfeasibleError:
            return StepResult(float("nan"), float("nan"))
        nli = nli_power_central(p, self.params, self.design.spans, self.design.span_km)
        snr, _ = snr_per_channel(state, nli)
        return StepResult(capacity_tbps(snr, self.params.grid), float(np.mean(state.gains_db)))

    def capacity(self, p: LaunchProfile) -> float:
        return self.evaluate(p).capacity_tbps

    def gain_ok(self, res: StepResult) -> bool:
        lo, hi = self.gain_window_db
        return lo <= res.mean_gain_db <= hi

    def step(self, p: LaunchProfile, action: int):
        """Return (next spectrum, reward in Tb/s, done, result of the next spectrum)."""
        before = self.evaluate(p)
        p2 = apply_action(p, action)
        after = self.evaluate(p2)
        if not after.feasible:
            return p2, INFEASIBLE_PENALTY_TBPS, True, after
        reward = after.capacity_tbps - before.capacity_tbps
        return p2, reward, not self.gain_ok(after), after


@dataclass
class EpisodeConfig:
    episodes: int = 100
    max_steps: int = 300
    discount: float = 1.0
    lr: float = 3e-4
    seed: int = 0


@dataclass
class Policy:
    net: nn.DenseNetwork
    adam: nn.AdamState
    input_scale_db: float = 1.0

    @classmethod
    def create(cls, rng, grid: ChannelGrid = C_BAND, hidden: int = 128, lr: float = 3e-4) -> "Policy":
        """Glorot hidden layer, zero output weights: a fresh policy is exactly uniform."""
        net = nn.DenseNetwork.init([grid.n_channels, hidden, N_ACTIONS], ["relu", "softmax"], seed=rng)
        net.layers[-1].weights[:] = 0.0
        return cls(net, nn.AdamState.for_params(net.parameters(), lr=lr))

    def features(self, power_dbm) -> np.ndarray:
        p = np.asarray(power_dbm)
        return (p - p.mean(axis=-1, keepdims=True)) / self.input_scale_db

    def probs(self, x: np.ndarray) -> np.ndarray:
        l1, l2 = self.net.layers
        logits = np.empty(l2.n_out)
        mlp_forward(l1.weights, l1.biases, l2.weights, l2.biases, np.ascontiguousarray(x), logits)
        return nn.softmax(logits)


def uniform_policy(grid: ChannelGrid = C_BAND) -> Policy:
    """A policy whose softmax output is exactly uniform (all output weights zero)."""
    return Policy.create(0, grid)


@dataclass
class EpisodeTrace:
    spectra: list = field(default_factory=list)  # start spectrum, then one per step
    capacities: list = field(default_factory=list)  # aligned with spectra
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def best_index(self) -> int | None:
        caps = np.asarray(self.capacities, dtype=float)
        if np.all(np.isnan(caps)):
            return None
        return int(np.nanargmax(caps))

    @property
    def best_capacity(self) -> float:
        i = self.best_index
        return float("nan") if i is None else float(self.capacities[i])

    @property
    def best_spectrum(self) -> LaunchProfile | None:
        i = self.best_index
        return None if i is None else self.spectra[i]


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(probs)
    return min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(probs) - 1)


def run_episode(policy: Policy | None, env: LinkEnv, rng: np.random.Generator,
                start: LaunchProfile | None = None, max_steps: int = 300) -> EpisodeTrace:
    """Roll out one episode. ``policy=None`` picks actions uniformly at random."""
    p = start if start is not None else random_spectrum(rng, env.params.grid)
    res = env.evaluate(p)
    trace = EpisodeTrace([p], [res.capacity_tbps])
    if not res.feasible:
        return trace
    for _ in range(max_steps):
        if policy is None:
            a = int(rng.integers(N_ACTIONS))
            lp = -np.log(N_ACTIONS)
        else:
            pr = policy.probs(policy.features(p.power_dbm))
            a = _sample(pr, rng)
            lp = float(np.log(pr[a]))
        p, r, done, res = env.step(p, a)
        trace.spectra.append(p)
        trace.capacities.append(res.capacity_tbps)
        trace.actions.append(a)
        trace.rewards.append(r)
        trace.log_probs.append(lp)
        if done:
            break
    return trace


def returns_to_go(rewards, discount: float = 1.0) -> np.ndarray:
    g = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        g[t] = acc
    return g


def policy_gradient(policy: Policy, trace: EpisodeTrace, advantages: np.ndarray) -> list[np.ndarray]:
    """Gradient of -sum_t A_t log pi(a_t | s_t) with respect to the policy parameters."""
    x = policy.features(np.array([s.power_dbm for s in trace.spectra[: len(trace)]]))
    probs = nn.forward(policy.net, x)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(trace)), trace.actions] = 1.0
    dlogits = -(onehot - probs) * advantages[:, None]
    return nn.backward(policy.net, x, dlogits, through_output_activation=False)


@dataclass
class TrainResult:
    policy: Policy
    best_spectrum: LaunchProfile | None
    best_capacity: float
    returns: list
    best_curve: list
    evaluations: int

    def log_rows(self):
        return [(i, r, b) for i, (r, b) in enumerate(zip(self.returns, self.best_curve))]


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    starts, actions, init = ss.spawn(3)
    return np.random.default_rng(starts), np.random.default_rng(actions), np.random.default_rng(init)


def train(env: LinkEnv, config: EpisodeConfig = EpisodeConfig(), policy: Policy | None = None) -> TrainResult:
    """REINFORCE with one Adam step per episode.

    The baseline for step t is the running mean, over past episodes, of the
    return-to-go observed at step t.
    """
    start_rng, action_rng, init_rng = _streams(config.seed)
    grid = env.params.grid
    if policy is None:
        policy = Policy.create(init_rng, grid, lr=config.lr)
    params = policy.net.parameters()
    evals0 = env.evaluations
    best_cap, best_p = -np.inf, None
    returns, curve = [], []
    base_sum = np.zeros(config.max_steps)
    base_cnt = np.zeros(config.max_steps)
    for ep in range(config.episodes):
        start = random_spectrum(start_rng, grid)
        trace = run_episode(policy, env, action_rng, start, config.max_steps)
        if trace.best_index is not None and trace.best_capacity > best_cap:
            best_cap, best_p = trace.best_capacity, trace.best_spectrum
        ret = trace.episode_return
        n = len(trace)
        if n:
            g = returns_to_go(trace.rewards, config.discount)
            baseline = base_sum[:n] / np.maximum(base_cnt[:n], 1)
            nn.adam_step(params, policy_gradient(policy, trace, g - baseline), policy.adam)
            base_sum[:n] += g
            base_cnt[:n] += 1
        returns.append(ret)
        curve.append(float(best_cap))
        log.debug("episode %d: return %.4f Tb/s, best %.4f Tb/s", ep, ret, best_cap)
    return TrainResult(policy, best_p, float(best_cap), returns, curve, env.evaluations - evals0)


def random_search(env: LinkEnv, budget: int, seed=0, max_steps: int = 300) -> TrainResult:
    """Uniform random actions from the same start spectra ``train`` would draw for ``seed``.

    Stops once ``budget`` capacity evaluations have been spent.
    """
    start_rng, action_rng, _ = _streams(seed)
    grid = env.params.grid
    evals0 = env.evaluations
    best_cap, best_p = -np.inf, None
    returns, curve = [], []
    while env.evaluations - evals0 < budget:
        start = random_spectrum(start_rng, grid)
        remaining = budget - (env.evaluations - evals0) - 1
        trace = run_episode(None, env, action_rng, start, max(0, min(max_steps, remaining)))
        if trace.best_index is not None and trace.best_capacity > best_cap:
            best_cap, best_p = trace.best_capacity, trace.best_spectrum
        returns.append(trace.episode_return)
        curve.append(float(best_cap))
    return TrainResult(None, best_p, float(best_cap), returns, curve, env.evaluations - evals0)


def evaluate_optimized(best: LaunchProfile, design: LinkDesign, model: edfa.SurrogateModel,
                       nf_db: float, params: NliParams | None = None) -> SnrReport:
    """Full explicit propagation of an optimized launch spectrum."""
    return evaluate(best, design, model, nf_db, params, mode="explicit")


def write_training_log(result: TrainResult, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["episode", "return", "best_capacity_tbps"])
        for ep, ret, best in result.log_rows():
            w.writerow([ep, f"{ret:.12g}", f"{best:.12g}"])


def write_spectrum(p: LaunchProfile, path, grid: ChannelGrid = C_BAND, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["channel", "freq_thz", "power_dbm"])
        for i, (f, pw) in enumerate(zip(grid.frequencies_hz / 1e12, p.power_dbm)):
            w.writerow([i, f"{f:.6f}", f"{pw:.12g}"])


def read_spectrum(path) -> LaunchProfile:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return LaunchProfile(np.array([float(r["power_dbm"]) for r in rows]))
