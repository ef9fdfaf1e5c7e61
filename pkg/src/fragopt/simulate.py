"""Direct simulation of the fragmentation tree, one or two devices.

Energy does not depend on timing, so each replica is a tree of splits
processed generation by generation. All replicas of a batch advance in
lockstep; the randomness of a split is drawn from the counter
``(seed, replica, event)`` where ``event`` counts splits within the replica
in a fixed order, so a replica's result does not depend on the batch it ran in.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ties
from .energy import EnergyEstimate, FirstDevice, TwoStepConfig
from .errors import ExplosionGuard, InfiniteActivity
from .model import FiniteDiscrete, FragmentationModel, MassPartition, _require_valid
from .rng import uniform_pair

MAX_EVENTS = 100_000_000
CHUNK = 20_000
TREE_STREAM = 10


@dataclass(frozen=True)
class SimOutput:
    energy: float
    frozen_partition: MassPartition
    n_events: int


@dataclass(frozen=True)
class TreeBatch:
    """Per-replica results; frozen sizes are stored as ``-log(size)``."""

    energy: np.ndarray
    n_events: np.ndarray
    frozen_replica: np.ndarray | None = None
    frozen_log_size: np.ndarray | None = None


class _Device:
    """Padded child table of a finite dislocation measure."""

    def __init__(self, model: FragmentationModel):
        nu = model.nu
        if not isinstance(nu, FiniteDiscrete):
            raise InfiniteActivity("direct tree simulation needs a finite dislocation measure")
        _require_valid(nu)
        w = nu.weights
        self.cum = np.cumsum(w) / w.sum()
        self.cum[-1] = 1.0
        width = max(len(p) for p, _ in nu.atoms)
        self.jump = np.full((len(nu.atoms), width), np.inf)
        for i, (p, _) in enumerate(nu.atoms):
            self.jump[i, : len(p)] = -np.log(np.array(p.masses))
        self.n_children = np.array([len(p) for p, _ in nu.atoms])
        self.cost = model.atom_costs()
        self.beta = model.beta


def _simulate_chunk(dev1: _Device, dev2: _Device, level: float, level0: float, skip_first: bool,
                    replicas: np.ndarray, seed: int, keep_frozen: bool, max_events: int,
                    log: Callable | None) -> TreeBatch:
    n = replicas.size
    energy = np.zeros(n)
    events = np.zeros(n, dtype=np.int64)
    # active fragments, grouped by replica (index into this chunk)
    rep = np.arange(n)
    xi = np.zeros(n)
    stage = np.full(n, 2 if skip_first else 1, dtype=np.int8)
    if skip_first:
        live = ties.not_passed(xi, level0)
        rep, xi, stage = rep[live], xi[live], stage[live]
    frozen_rep, frozen_xi = [], []
    total = 0
    while rep.size:
        total += rep.size
        if total > max_events:
            raise ExplosionGuard(f"more than {max_events} dislocations")
        first = np.searchsorted(rep, rep, side="left")
        rank = np.arange(rep.size) - first
        event = events[rep] + rank
        u, _ = uniform_pair(seed, replicas[rep], event.astype(np.uint64), stream=TREE_STREAM)
        events += np.bincount(rep, minlength=n)
        new_rep, new_xi, new_stage = [], [], []
        for st, dev, lvl in ((1, dev1, level), (2, dev2, level0)):
            sel = stage == st
            if not np.any(sel):
                continue
            r, x = rep[sel], xi[sel]
            atom = np.minimum(np.searchsorted(dev.cum, u[sel], side="right"), len(dev.cum) - 1)
            inc = np.exp(-dev.beta * x) * dev.cost[atom]
            energy += np.bincount(r, weights=inc, minlength=n)
            if log is not None:
                log(replicas[r], st, np.exp(-x), atom, inc)
            width = dev.jump.shape[1]
            cx = (x[:, None] + dev.jump[atom]).ravel()
            cr = np.repeat(r, width)
            order_key = np.repeat(np.flatnonzero(sel), width)
            real = np.isfinite(cx)
            cx, cr, order_key = cx[real], cr[real], order_key[real]
            if st == 1:
                stay = ties.not_passed(cx, level)
                go2 = ~stay & ties.not_passed(cx, level0)
                out = ~stay & ~go2
                cst = np.where(stay, 1, 2).astype(np.int8)
                keep = stay | go2
            else:
                keep = ties.not_passed(cx, level0)
                out = ~keep
                cst = np.full(cx.size, 2, dtype=np.int8)
            if keep_frozen:
                frozen_rep.append(cr[out])
                frozen_xi.append(cx[out])
            new_rep.append(np.stack([order_key[keep], cr[keep]]))
            new_xi.append(cx[keep])
            new_stage.append(cst[keep])
        if not new_rep:
            break
        key = np.concatenate(new_rep, axis=1)
        xi_all = np.concatenate(new_xi)
        st_all = np.concatenate(new_stage)
        # stable order by replica, then parent position: deterministic within a replica
        order = np.lexsort((key[0], key[1]))
        rep, xi, stage = key[1][order], xi_all[order], st_all[order]
    fr = fx = None
    if keep_frozen:
        fr = replicas[np.concatenate(frozen_rep)] if frozen_rep else np.zeros(0, dtype=np.uint64)
        fx = np.concatenate(frozen_xi) if frozen_xi else np.zeros(0)
    return TreeBatch(energy, events, fr, fx)


def simulate_batch(model1: FragmentationModel, model2: FragmentationModel | None, cfg: TwoStepConfig, *,
                   n: int, seed: int, first_replica: int = 0, keep_frozen: bool = False,
                   max_events: int = MAX_EVENTS, event_log=None) -> TreeBatch:
    """Replicas ``first_replica .. first_replica+n-1`` of the two-step procedure.

    Fragments of device 1 still at size ``>= eta`` are split again; once below,
    device 2 breaks them until they are below ``eta0``. ``model2=None`` uses
    device 1 throughout.
    """
    dev1 = _Device(model1)
    dev2 = dev1 if model2 is None or model2 is model1 else _Device(model2)
    skip = cfg.first_device is FirstDevice.SKIPPED
    writer = None
    if event_log is not None:
        fh = open(event_log, "w", newline="")
        w = csv.writer(fh)
        w.writerow(["replica", "stage", "size", "atom", "energy_increment"])

        def writer(r, st, size, atom, inc):
            for row in zip(r, size, atom, inc):
                w.writerow([int(row[0]), st, repr(float(row[1])), int(row[2]), repr(float(row[3]))])
    parts = []
    try:
        for lo in range(0, n, CHUNK):
            reps = np.arange(first_replica + lo, first_replica + min(n, lo + CHUNK), dtype=np.uint64)
            parts.append(_simulate_chunk(dev1, dev2, cfg.ell, cfg.ell0, skip, reps, seed, keep_frozen,
                                         max_events, writer))
    finally:
        if event_log is not None:
            fh.close()
    return TreeBatch(
        np.concatenate([p.energy for p in parts]),
        np.concatenate([p.n_events for p in parts]),
        np.concatenate([p.frozen_replica for p in parts]) if keep_frozen else None,
        np.concatenate([p.frozen_log_size for p in parts]) if keep_frozen else None,
    )


def _single(batch: TreeBatch) -> SimOutput:
    sizes = np.exp(-batch.frozen_log_size)
    return SimOutput(float(batch.energy[0]), MassPartition(tuple(sizes.tolist())), int(batch.n_events[0]))


def simulate_one_step(model: FragmentationModel, eta: float, seed: int, replica: int = 0,
                      event_log=None) -> SimOutput:
    b = simulate_batch(model, None, TwoStepConfig(eta, eta), n=1, seed=seed, first_replica=replica,
                       keep_frozen=True, event_log=event_log)
    return _single(b)


def simulate_two_step(model1: FragmentationModel, model2: FragmentationModel, cfg: TwoStepConfig,
                      seed: int, replica: int = 0, event_log=None) -> SimOutput:
    b = simulate_batch(model1, model2, cfg, n=1, seed=seed, first_replica=replica, keep_frozen=True,
                       event_log=event_log)
    return _single(b)


def estimate_mean(op: Callable[[int, int], np.ndarray] | Callable, n_replicas: int, seed: int) -> EnergyEstimate:
    """Mean and standard error of ``op``.

    ``op(n, seed)`` returns ``n`` per-replica values (vectorized form), or
    ``op(seed, replica)`` returns one ``SimOutput``/float when it is marked
    with ``per_replica = True``.
    """
    if n_replicas < 2:
        raise ValueError("n_replicas must be at least 2")
    if getattr(op, "per_replica", False):
        vals = []
        for r in range(n_replicas):
            out = op(seed, r)
            vals.append(out.energy if isinstance(out, SimOutput) else float(out))
        vals = np.array(vals)
    else:
        vals = np.asarray(op(n_replicas, seed), dtype=float)
    err = float(vals.std(ddof=1) / math.sqrt(n_replicas))
    return EnergyEstimate(float(vals.mean()), err, "branching_mc")


def tree_energy_mean(model1: FragmentationModel, model2: FragmentationModel | None, cfg: TwoStepConfig,
                     n_replicas: int, seed: int) -> EnergyEstimate:
    return estimate_mean(lambda n, s: simulate_batch(model1, model2, cfg, n=n, seed=s).energy,
                         n_replicas, seed)


def tagged_fragment_jumps(model: FragmentationModel, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Jumps ``-log s`` of a tagged child after one split, with importance weights.

    The split is drawn as in the tree; the child is chosen with probability
    ``s_j**alpha / sum_i s_i**alpha`` and carries weight ``sum_i s_i**alpha``
    (identically 1 for conservative splits). The weighted law is ``Pi / lambda``.
    """
    dev = _Device(model)
    alpha = model.alpha
    reps = np.arange(n, dtype=np.uint64)
    u_atom, u_child = uniform_pair(seed, reps, 0, stream=TREE_STREAM + 1)
    atom = np.minimum(np.searchsorted(dev.cum, u_atom, side="right"), len(dev.cum) - 1)
    s = np.exp(-dev.jump[atom])  # padded children have s = 0
    sa = s**alpha
    mass = sa.sum(axis=1)
    cum = np.cumsum(sa, axis=1) / mass[:, None]
    j = np.minimum((cum < u_child[:, None]).sum(axis=1), dev.n_children[atom] - 1)
    return dev.jump[atom, j], mass
