"""Desk-scale federated ERM: data, local SGD and the five aggregation strategies."""

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .channel import SGD_STREAM, NetworkModel, RoundKey, draw_round
from .errors import DivergenceError, InvalidParamsError, RetryExhaustedError
from .gc_code import CodeParams, generate_code
from .protocol import OutcomeKind, gc_decode, gc_plus_decode, gradient_share, stack_transcripts

# --------------------------------------------------------------------------
# Data and models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    family: str = "quadratic"
    D: int = 5
    skew: float = 1.0
    n_per_client: int = 50
    noise: float = 1.0
    num_classes: int = 3
    separation: float = 3.0
    one_class_per_client: bool = False

    def __post_init__(self):
        if self.family not in ("quadratic", "softmax"):
            raise InvalidParamsError(f"unknown model family {self.family!r}")
        if self.skew < 0:
            raise InvalidParamsError("skew must be nonnegative")
        if self.D < 1 or self.n_per_client < 1 or self.num_classes < 2:
            raise InvalidParamsError("D, n_per_client must be >= 1 and num_classes >= 2")


@dataclass(frozen=True, eq=False)
class ClientData:
    X: np.ndarray
    y: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    family: str
    clients: tuple
    centers: Optional[np.ndarray] = None
    num_classes: Optional[int] = None

    @property
    def M(self):
        return len(self.clients)


def generate_heterogeneous_data(M, D, skew, seed, spec: Optional[ModelSpec] = None) -> FederatedDataset:
    """Per-client datasets whose heterogeneity grows with ``skew``.

    Quadratic: client ``m`` holds samples whose mean is exactly
    ``c_m = skew * z_m`` with ``z_m`` standard normal. Softmax: Gaussian
    class clusters, per-client label proportions from a symmetric
    Dirichlet with concentration ``skew`` (``inf`` gives uniform labels).
    """
    spec = spec or ModelSpec(D=D, skew=skew)
    if skew < 0:
        raise InvalidParamsError("skew must be nonnegative")
    rng = np.random.default_rng(seed)
    n = spec.n_per_client
    if spec.family == "quadratic":
        centers = skew * rng.standard_normal((M, D))
        clients = []
        for m in range(M):
            noise = spec.noise * rng.standard_normal((n, D))
            noise -= noise.mean(axis=0)
            clients.append(ClientData(X=centers[m] + noise))
        return FederatedDataset("quadratic", tuple(clients), centers=centers)

    K = spec.num_classes
    means = spec.separation * rng.standard_normal((K, D))
    clients = []
    for m in range(M):
        if spec.one_class_per_client:
            y = np.full(n, m % K)
        else:
            if np.isinf(skew):
                props = np.full(K, 1.0 / K)
            elif skew == 0:
                props = np.eye(K)[rng.integers(K)]
            else:
                props = rng.dirichlet(np.full(K, skew))
            y = rng.choice(K, size=n, p=props)
        X = means[y] + rng.standard_normal((n, D))
        clients.append(ClientData(X=X, y=y.astype(int)))
    return FederatedDataset("softmax", tuple(clients), centers=means, num_classes=K)


class QuadraticModel:
    """``F_m(g) = mean_i ||g - x_{m,i}||^2 / 2``; minimizer of the global
    objective is the mean of the client centers."""

    def __init__(self, data: FederatedDataset):
        self.data = data
        self.dim = data.clients[0].X.shape[1]
        self.M = data.M

    def client_loss(self, g, m):
        diff = self.data.clients[m].X - g
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))

    def client_grad(self, g, m, idx=None):
        X = self.data.clients[m].X
        if idx is not None:
            X = X[idx]
        return g - X.mean(axis=0)

    def n_samples(self, m):
        return self.data.clients[m].X.shape[0]

    def optimum(self):
        return np.mean([c.X.mean(axis=0) for c in self.data.clients], axis=0)

    def accuracy(self, g):
        return None


class SoftmaxModel:
    """Multinomial logistic regression with a bias; parameters are the
    flattened ``(D + 1) x K`` weight matrix."""

    def __init__(self, data: FederatedDataset):
        self.data = data
        self.K = data.num_classes
        self.D = data.clients[0].X.shape[1]
        self.dim = (self.D + 1) * self.K
        self.M = data.M

    def _design(self, X):
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def _probs(self, g, X):
        logits = self._design(X) @ g.reshape(self.D + 1, self.K)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def client_loss(self, g, m):
        c = self.data.clients[m]
        logits = self._design(c.X) @ g.reshape(self.D + 1, self.K)
        shift = logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(logits - shift).sum(axis=1)) + shift[:, 0]
        return float(np.mean(lse - logits[np.arange(len(c.y)), c.y]))

    def client_grad(self, g, m, idx=None):
        c = self.data.clients[m]
        X, y = (c.X, c.y) if idx is None else (c.X[idx], c.y[idx])
        P = self._probs(g, X)
        P[np.arange(len(y)), y] -= 1.0
        return (self._design(X).T @ P / len(y)).ravel()

    def n_samples(self, m):
        return self.data.clients[m].X.shape[0]

    def accuracy(self, g):
        hits = total = 0
        for c in self.data.clients:
            pred = np.argmax(self._design(c.X) @ g.reshape(self.D + 1, self.K), axis=1)
            hits += int(np.sum(pred == c.y))
            total += len(c.y)
        return hits / total


def build_model(data: FederatedDataset):
    return QuadraticModel(data) if data.family == "quadratic" else SoftmaxModel(data)


@dataclass(frozen=True)
class Evaluation:
    loss: float
    grad_norm: float
    accuracy: Optional[float] = None


def evaluate(model, g) -> Evaluation:
    """Full-data loss and gradient norm of the equally weighted objective."""
    g = np.asarray(g, dtype=float)
    loss = float(np.mean([model.client_loss(g, m) for m in range(model.M)]))
    grad = np.mean([model.client_grad(g, m) for m in range(model.M)], axis=0)
    return Evaluation(loss=loss, grad_norm=float(np.linalg.norm(grad)), accuracy=model.accuracy(g))


def local_sgd(model, m, g0, I, eta, batch=None, rng=None):
    """``I`` SGD steps on client ``m`` from ``g0``; returns ``g^I - g^0``.

    ``batch=None`` uses the full local dataset (exact gradients).
    """
    if I < 1:
        raise InvalidParamsError("I must be at least 1")
    g0 = np.asarray(g0, dtype=float)
    g = g0.copy()
    n = model.n_samples(m)
    for _ in range(I):
        idx = None
        if batch is not None and batch < n:
            idx = rng.choice(n, size=batch, replace=False)
        with np.errstate(over="ignore", invalid="ignore"):
            g = g - eta * model.client_grad(g, m, idx)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"client {m} diverged during local SGD")
    return g - g0


# --------------------------------------------------------------------------
# Strategies
# --------------------------------------------------------------------------


class Strategy(str, enum.Enum):
    IDEAL_FL = "IdealFL"
    INTERMITTENT_FL = "IntermittentFL"
    COGC_D1 = "CoGC_D1"
    COGC_D2 = "CoGC_D2"
    GC_PLUS = "GCPlus"

    @property
    def coded(self):
        return self in (Strategy.COGC_D1, Strategy.COGC_D2, Strategy.GC_PLUS)


@dataclass(frozen=True)
class TrainConfig:
    M: int
    I: int
    T: int
    eta: float
    strategy: Strategy = Strategy.IDEAL_FL
    t_r: int = 2
    model: ModelSpec = field(default_factory=ModelSpec)
    batch: Optional[int] = None
    seed: int = 0
    retry_cap: int = 10_000
    final_cap: int = 10_000
    decode_mode: str = "exact"
    fresh_codes: bool = True
    record_starts: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelSpec(**self.model))
        if self.eta <= 0:
            raise InvalidParamsError("eta must be positive")
        if min(self.M, self.I, self.T, self.t_r) < 1:
            raise InvalidParamsError("M, I, T and t_r must be at least 1")
        if self.batch is not None and self.batch < 1:
            raise InvalidParamsError("batch must be positive")

    def to_dict(self):
        out = asdict(self)
        out["strategy"] = self.strategy.value
        return out


@dataclass(frozen=True)
class RoundRecord:
    round: int
    loss: float
    grad_norm: float
    outcome: str
    K4_size: int
    retries: int
    tx_cumulative: int
    accuracy: Optional[float] = None


TRACE_COLUMNS = ("round", "strategy", "loss", "grad_norm", "outcome", "K4_size", "retries", "tx_cumulative", "accuracy")


@dataclass(eq=False)
class TrainingTrace:
    strategy: Strategy
    config: dict
    records: List[RoundRecord] = field(default_factory=list)
    final_params: Optional[np.ndarray] = None
    final_recovered: bool = True
    starts: List[np.ndarray] = field(default_factory=list)

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            acc = "" if r.accuracy is None else repr(r.accuracy)
            w.writerow([r.round, self.strategy.value, repr(r.loss), repr(r.grad_norm), r.outcome,
                        r.K4_size, r.retries, r.tx_cumulative, acc])
        return buf.getvalue()

    def write(self, csv_path):
        """Write the CSV and a ``.json`` sidecar holding the config."""
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv())
        side = {
            "config": self.config,
            "final_recovered": self.final_recovered,
            "final_params": None if self.final_params is None else self.final_params.tolist(),
        }
        csv_path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=2))
        return csv_path


class _Runner:
    def __init__(self, config, network, code_params):
        self.cfg = config
        self.net = network
        if network.M != config.M:
            raise InvalidParamsError("network size differs from config.M")
        if config.strategy.coded:
            if code_params is None:
                raise InvalidParamsError(f"{config.strategy.value} needs code parameters")
            if code_params.M != config.M:
                raise InvalidParamsError("code_params.M differs from config.M")
        self.code_params = code_params
        spec = config.model
        self.data = generate_heterogeneous_data(config.M, spec.D, spec.skew, config.seed, spec)
        self.model = build_model(self.data)
        self.tx = 0
        self.trace = TrainingTrace(strategy=config.strategy, config=config.to_dict())

    def code(self, r, a):
        cp = self.code_params
        if not self.cfg.fresh_codes:
            return generate_code(cp)
        seed = RoundKey(cp.seed, r, a).code_seed()
        return generate_code(CodeParams(cp.M, cp.s, seed))

    def conn(self, r, a):
        return draw_round(self.net, RoundKey(self.cfg.seed, r, a))

    def local_updates(self, r, starts):
        cfg = self.cfg
        out = np.empty((cfg.M, self.model.dim))
        for m in range(cfg.M):
            rng = None
            if cfg.batch is not None:
                rng = RoundKey(cfg.seed, r, 0).generator(SGD_STREAM, m)
            out[m] = local_sgd(self.model, m, starts[m], cfg.I, cfg.eta, cfg.batch, rng)
        return out

    def record(self, r, g, outcome, k4, retries):
        ev = evaluate(self.model, g)
        if not np.isfinite(ev.loss):
            raise DivergenceError(f"global loss is not finite at round {r}")
        self.trace.records.append(
            RoundRecord(r, ev.loss, ev.grad_norm, outcome, int(k4), int(retries), int(self.tx), ev.accuracy)
        )

    def cogc_attempt(self, r, a, updates, incomplete):
        code = self.code(r, a)
        t = gradient_share(code, self.conn(r, a), updates, transmit_incomplete=incomplete, attempt=a)
        s = code.s
        self.tx += s * code.M + (code.M if incomplete else len(t.K3))
        return code, t

    def run(self):
        cfg = self.cfg
        g = np.zeros(self.model.dim)
        self.record(0, g, "init", 0, 0)
        step = {
            Strategy.IDEAL_FL: self.step_ideal,
            Strategy.INTERMITTENT_FL: self.step_intermittent,
            Strategy.COGC_D1: self.step_d1,
            Strategy.GC_PLUS: self.step_gcplus,
        }
        if cfg.strategy is Strategy.COGC_D2:
            return self.run_d2(g)
        for r in range(1, cfg.T + 1):
            g = step[cfg.strategy](r, g)
        self.trace.final_params = g
        return self.trace

    def step_ideal(self, r, g):
        dg = self.local_updates(r, [g] * self.cfg.M)
        self.tx += self.cfg.M
        g = g + dg.mean(axis=0)
        self.record(r, g, "Full", self.cfg.M, 1)
        return g

    def step_intermittent(self, r, g):
        M = self.cfg.M
        dg = self.local_updates(r, [g] * M)
        tau = np.asarray(self.conn(r, 0).tau, dtype=bool)
        self.tx += M
        k = int(tau.sum())
        if k:
            g = g + dg[tau].mean(axis=0)
        outcome = "Full" if k == M else ("Partial" if k else "Failure")
        self.record(r, g, outcome, k, 1)
        return g

    def step_d1(self, r, g):
        dg = self.local_updates(r, [g] * self.cfg.M)
        for a in range(self.cfg.retry_cap):
            code, t = self.cogc_attempt(r, a, dg, incomplete=False)
            out = gc_decode(code, t)
            if out.success:
                g = g + out.global_update
                self.record(r, g, out.kind.value, self.cfg.M, a + 1)
                return g
        self.trace.final_params = g
        raise RetryExhaustedError(
            f"round {r}: no recovery within {self.cfg.retry_cap} attempts", trace=self.trace
        )

    def step_gcplus(self, r, g):
        cfg = self.cfg
        dg = self.local_updates(r, [g] * cfg.M)
        transcripts = []
        a = 0
        while a < cfg.retry_cap:
            for _ in range(cfg.t_r):
                _, t = self.cogc_attempt(r, a, dg, incomplete=True)
                transcripts.append(t)
                a += 1
            out = gc_plus_decode(stack_transcripts(transcripts), mode=cfg.decode_mode)
            if out.success:
                g = g + out.global_update
                self.record(r, g, out.kind.value, len(out.K4), a)
                return g
        self.trace.final_params = g
        raise RetryExhaustedError(f"round {r}: K4 stayed empty for {a} attempts", trace=self.trace)

    def run_d2(self, g):
        cfg = self.cfg
        M = cfg.M
        local = np.tile(g, (M, 1))
        updated = True
        dg = None
        for r in range(1, cfg.T + 1):
            starts = d2_start_points(g, local, updated)
            if cfg.record_starts:
                self.trace.starts.append(starts.copy())
            dg = self.local_updates(r, starts)
            local = starts + dg
            code, t = self.cogc_attempt(r, 0, dg, incomplete=False)
            out = gc_decode(code, t)
            updated = out.success
            if updated:
                g = g + out.global_update
            self.record(r, g, out.kind.value, M if updated else 0, 1)

        if not updated:
            # communication-only attempts on the last round's updates
            last = self.trace.records.pop()
            a = 0
            for a in range(1, cfg.final_cap + 1):
                code, t = self.cogc_attempt(cfg.T, a, dg, incomplete=False)
                out = gc_decode(code, t)
                if out.success:
                    g = g + out.global_update
                    updated = True
                    break
            kind = OutcomeKind.FULL_VIA_GC if updated else OutcomeKind.FAILURE
            self.record(cfg.T, g, kind.value, M if updated else 0, last.retries + a)
        self.trace.final_params = g
        self.trace.final_recovered = updated
        return self.trace


def d2_start_points(g, local, updated):
    """Start points for a Design-2 round: the broadcast model after a
    successful update, otherwise each client's own latest local model."""
    if updated:
        return np.tile(g, (local.shape[0], 1))
    return np.array(local, copy=True)


def train(config: TrainConfig, network: NetworkModel, code_params: Optional[CodeParams] = None) -> TrainingTrace:
    """Run ``config.T`` rounds of the configured strategy.

    Coded strategies draw a fresh code per attempt from ``code_params.seed``
    unless ``config.fresh_codes`` is off. CoGC_D1 and GCPlus raise
    :class:`RetryExhaustedError` (carrying the partial trace) when a round
    exceeds ``retry_cap`` attempts; CoGC_D2 instead reports
    ``final_recovered=False``.
    """
    return _Runner(config, network, code_params).run()
