"""Monte Carlo oracles for the closed forms and the sweep runner."""

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .analysis import expected_retries, full_recovery_lower_bound, k_star_inverse, outage_probability
from .channel import CODE_STREAM, NetworkModel, RoundConnectivity, RoundKey, draw_rounds, network_from_dict
from .errors import InvalidInputError, InvalidParamsError, NoSampleError
from .gc_code import CodeParams, cyclic_support, generate_code
from .protocol import OutcomeKind, gc_decode, gc_plus_decode, gradient_share, stack_transcripts
from .training import ModelSpec, Strategy, TrainConfig, train


@dataclass(frozen=True)
class McReport:
    estimate: float
    std_error: float
    trials: int
    target: Optional[float] = None
    z_score: Optional[float] = None

    @classmethod
    def from_samples(cls, samples, target=None):
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            raise NoSampleError("no samples")
        est = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls.build(est, se, n, target)

    @classmethod
    def build(cls, estimate, std_error, trials, target=None):
        z = None
        if target is not None:
            diff = estimate - target
            if std_error > 0:
                z = diff / std_error
            else:
                z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return cls(float(estimate), float(std_error), int(trials), target, z)

    def as_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "trials": self.trials,
            "target": self.target,
            "z_score": self.z_score,
        }


def _check_trials(trials):
    if int(trials) < 1:
        raise InvalidParamsError("trials must be at least 1")
    return int(trials)


def _complete_mask(T, s):
    """``(n, M)`` flags: every link a client hears over is up."""
    n, M, _ = T.shape
    ok = np.ones((n, M), dtype=bool)
    for m, cols in enumerate(cyclic_support(M, s)):
        for k in cols[1:]:
            ok[:, m] &= T[:, m, k].astype(bool)
    return ok


#: Attempts drawn per RNG key; keeps the uniform buffers small.
CHUNK = 8192


def _chunks(network, seed, n):
    """Connectivity draws for ``n`` attempts, in fixed-size keyed blocks."""
    for block, start in enumerate(range(0, n, CHUNK)):
        yield draw_rounds(network, RoundKey(seed, 0, block), min(CHUNK, n - start))


def _gc_success(T, tau, s):
    M = tau.shape[1]
    return (_complete_mask(T, s) & tau.astype(bool)).sum(axis=1) >= M - s


def mc_outage(network: NetworkModel, s: int, trials: int, seed: int = 0, engine="batch") -> McReport:
    """Fraction of single attempts the standard decoder cannot decode.

    ``engine="batch"`` counts complete delivered sums straight from the
    vectorized draws; ``engine="protocol"`` runs sharing and decoding per
    trial on the same draws, so both engines return identical counts.
    """
    n = _check_trials(trials)
    target = outage_probability(network, s).P_O
    if engine not in ("batch", "protocol"):
        raise InvalidInputError(f"unknown engine {engine!r}")
    code = generate_code(CodeParams(network.M, s, seed))
    updates = np.zeros((network.M, 1))
    k = 0
    for T, tau in _chunks(network, seed, n):
        if engine == "batch":
            k += int(np.count_nonzero(~_gc_success(T, tau, s)))
            continue
        for i in range(T.shape[0]):
            t = gradient_share(code, RoundConnectivity(T[i], tau[i]), updates, transmit_incomplete=False)
            k += not gc_decode(code, t).success
    p = k / n
    return McReport.build(p, math.sqrt(p * (1 - p) / n), n, target)


def mc_retries(network: NetworkModel, s: int, trials: int, seed: int = 0) -> McReport:
    """Design-1 attempts per round: lengths of runs ending in a success."""
    n = _check_trials(trials)
    P_O = outage_probability(network, s).P_O
    target = expected_retries(P_O) if P_O < 1 else None
    counts = []
    run = 0
    block = 0
    while len(counts) < n:
        T, tau = draw_rounds(network, RoundKey(seed, 0, block), CHUNK)
        block += 1
        for ok in _gc_success(T, tau, s):
            run += 1
            if ok:
                counts.append(run)
                run = 0
                if len(counts) == n:
                    break
        if block > 10_000 and not counts:
            raise NoSampleError("no successful attempt observed")
    return McReport.from_samples(counts, target)


def bin_label(outcome):
    if outcome.kind is OutcomeKind.PARTIAL:
        return f"Partial({len(outcome.K4)})"
    return outcome.kind.value


@dataclass(eq=False)
class RecoveryProfile:
    M: int
    s: int
    t_r: int
    trials: int
    mode: str
    counts: Dict[str, int] = field(default_factory=dict)
    k4_sizes: np.ndarray = field(default=None, repr=False)
    max_rel_error: float = 0.0
    max_gc_error: float = 0.0
    max_aggregation_error: float = 0.0

    @property
    def full_count(self):
        return self.counts.get("FullViaGC", 0) + self.counts.get("FullViaPlus", 0)

    def full_rate(self, target=None) -> McReport:
        ok = (self.k4_sizes == self.M).astype(float)
        return McReport.from_samples(ok, target)

    def modal_bin(self):
        """Bin with the largest count, full recovery pooled over both decoders."""
        pooled = {"Full": self.full_count}
        pooled.update({k: v for k, v in self.counts.items() if k not in ("FullViaGC", "FullViaPlus")})
        return max(sorted(pooled), key=lambda k: pooled[k])

    def as_dict(self):
        return {
            "M": self.M,
            "s": self.s,
            "t_r": self.t_r,
            "trials": self.trials,
            "mode": self.mode,
            "counts": dict(sorted(self.counts.items())),
            "max_rel_error": self.max_rel_error,
            "max_gc_error": self.max_gc_error,
            "max_aggregation_error": self.max_aggregation_error,
        }


def mc_recovery_profile(
    network: NetworkModel,
    s: int,
    t_r: int,
    trials: int,
    seed: int = 0,
    mode="exact",
    fresh_codes=True,
    dim: int = 3,
) -> RecoveryProfile:
    """Outcome histogram of the GC+ decoder over ``t_r`` stacked attempts.

    Every trial draws random ground-truth updates, so the profile also
    records the worst relative error of individually recovered updates, of
    the standard decoder's mean, and the worst deviation of the applied
    update from the mean over ``K4``.
    """
    n = _check_trials(trials)
    if t_r < 1:
        raise InvalidParamsError("t_r must be at least 1")
    M = network.M
    draws = _chunks(network, seed, n * t_r)
    T = tau = None
    offset = 0
    side = RoundKey(seed).generator(CODE_STREAM)
    code_seeds = side.integers(0, 2**63, size=(n, t_r), dtype=np.int64)
    updates_all = side.standard_normal((n, M, dim))
    fixed = generate_code(CodeParams(M, s, seed))

    counts = Counter()
    sizes = np.zeros(n, dtype=int)
    max_rel = max_gc = max_agg = 0.0
    for i in range(n):
        updates = updates_all[i]
        transcripts = []
        for a in range(t_r):
            j = i * t_r + a - offset
            if T is None or j >= T.shape[0]:
                offset += 0 if T is None else T.shape[0]
                T, tau = next(draws)
                j = i * t_r + a - offset
            code = generate_code(CodeParams(M, s, int(code_seeds[i, a]))) if fresh_codes else fixed
            transcripts.append(gradient_share(code, RoundConnectivity(T[j], tau[j]), updates, attempt=a))
        out = gc_plus_decode(stack_transcripts(transcripts), mode=mode)
        counts[bin_label(out)] += 1
        sizes[i] = len(out.K4)
        if out.kind is OutcomeKind.FULL_VIA_GC:
            truth = updates.mean(axis=0)
            err = np.linalg.norm(out.global_update - truth) / max(np.linalg.norm(truth), 1e-300)
            max_gc = max(max_gc, err)
        elif out.success:
            for k, v in out.recovered.items():
                err = np.linalg.norm(v - updates[k]) / max(np.linalg.norm(updates[k]), 1e-300)
                max_rel = max(max_rel, err)
            mean_k4 = np.mean([out.recovered[k] for k in sorted(out.K4)], axis=0)
            max_agg = max(max_agg, float(np.max(np.abs(out.global_update - mean_k4))))
    return RecoveryProfile(
        M=M,
        s=s,
        t_r=t_r,
        trials=n,
        mode=str(mode),
        counts=dict(counts),
        k4_sizes=sizes,
        max_rel_error=float(max_rel),
        max_gc_error=float(max_gc),
        max_aggregation_error=float(max_agg),
    )


def full_recovery_report(profile: RecoveryProfile, p: float) -> McReport:
    target = full_recovery_lower_bound(profile.M, profile.s, profile.t_r, p)
    return profile.full_rate(target)


def kbar_report(profile: RecoveryProfile, p: float, P_O: Optional[float] = None) -> McReport:
    """Conditional mean of ``1 / |K4|`` against the ``1 / K*`` bound."""
    k4 = profile.k4_sizes[profile.k4_sizes > 0]
    if k4.size == 0:
        raise NoSampleError("every trial ended with K4 empty")
    target = None
    if P_O is not None:
        target = k_star_inverse(profile.M, profile.s, profile.t_r, p, P_O)
    return McReport.from_samples(1.0 / k4, target)


def mc_kbar(network: NetworkModel, s: int, t_r: int, trials: int, seed: int = 0) -> McReport:
    p = network.homogeneous_value()
    profile = mc_recovery_profile(network, s, t_r, trials, seed)
    P_O = outage_probability(network, s).P_O if p is not None else None
    return kbar_report(profile, p if p is not None else 0.0, P_O)


# --------------------------------------------------------------------------
# Sweep runner
# --------------------------------------------------------------------------


def config_hash(config) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _network_label(spec, index):
    return str(spec.get("name", f"net{index}"))


def run_experiment_suite(config, out_dir) -> dict:
    """Run every ``strategies x networks x seeds`` combination of each sweep.

    ``config`` is a path to a JSON file or an already-parsed dict::

        {"sweeps": [{"name": "quad", "s": 3, "strategies": [...],
                     "networks": [{"M": 10, "p_c2c": 0.1, "p_up": 0.1}],
                     "seeds": [0, 1, 2],
                     "train": {"I": 1, "T": 100, "eta": 0.1, "model": {...}}}]}

    Writes ``traces/<sweep>__<strategy>__<network>__s<seed>.csv`` (plus
    JSON sidecars) and ``summary.json``; returns the summary.
    """
    if isinstance(config, (str, Path)):
        path = Path(config)
        try:
            config = json.loads(path.read_text())
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(config, dict):
        raise InvalidInputError("suite config must be a JSON object")
    out_dir = Path(out_dir)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for sw_i, sweep in enumerate(config.get("sweeps", [])):
        name = str(sweep.get("name", f"sweep{sw_i}"))
        s = int(sweep.get("s", 1))
        base = dict(sweep.get("train", {}))
        model = ModelSpec(**base.pop("model", {}))
        for net_i, net_spec in enumerate(sweep.get("networks", [])):
            network = network_from_dict(net_spec)
            label = _network_label(net_spec, net_i)
            for strategy in sweep.get("strategies", []):
                strategy = Strategy(strategy)
                for seed in sweep.get("seeds", [0]):
                    cfg = TrainConfig(M=network.M, strategy=strategy, model=model, seed=int(seed), **base)
                    code = CodeParams(network.M, s, int(seed)) if strategy.coded else None
                    trace = train(cfg, network, code)
                    fname = f"{name}__{strategy.value}__{label}__s{seed}.csv"
                    trace.write(trace_dir / fname)
                    fin = trace.final
                    rows.append({
                        "sweep": name,
                        "strategy": strategy.value,
                        "network": label,
                        "seed": int(seed),
                        "final_loss": fin.loss,
                        "final_grad_norm": fin.grad_norm,
                        "final_accuracy": fin.accuracy,
                        "tx_total": fin.tx_cumulative,
                        "rounds": fin.round,
                        "final_recovered": trace.final_recovered,
                        "trace": f"traces/{fname}",
                    })
    summary = {"config_hash": config_hash(config), "runs": rows}
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    return summary
