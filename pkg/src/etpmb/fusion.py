"""Kullback-Leibler-average fusion of Poisson multi-Bernoulli posteriors.

Posteriors from several sensors are brought to a common number of components
``K`` by splitting each sensor's PPP into parts, components are matched across
sensors by a minimum-cost assignment on symmetric KL divergences (the fusion
map), and each matched tuple is fused in closed form as a weighted geometric
mean. More than two posteriors are folded in one at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve
from .densities import (
    LOG_2PI,
    POS,
    BernoulliComponent,
    EtState,
    GammaDensity,
    GaussianDensity,
    PmbDensity,
    PoissonIntensity,
    PppComponent,
    SingularCovarianceError,
    condition_cov,
    gamma_moment_match,
    marginal,
    moment_match,
    symmetric_kld,
)

R_CLAMP = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    weights: tuple
    recycle_threshold: float = 0.1
    kld_gate: float = 50.0
    part_mass_cap: float = 0.9
    # compare Bernoullis on the center marginal only (full state otherwise)
    gate_on_center: bool = True

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if any(x < 0 or x > 1 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"fusion weights must lie in [0, 1] and sum to 1, got {w}")
        if not 0 <= self.recycle_threshold <= 1 or self.kld_gate <= 0 or self.part_mass_cap <= 0:
            raise ValueError("invalid fusion configuration")

    @classmethod
    def uniform(cls, n_sensors: int, **kw) -> "FusionConfig":
        return cls(weights=tuple([1.0 / n_sensors] * n_sensors), **kw)


# --------------------------------------------------------------------------- field of view partition


class FovPartition:
    """The ``2**n`` subregions defined by which sensors see a point.

    A subregion is identified by a bit mask: bit ``s`` is set when sensor
    ``s`` covers the point. Mask ``0`` is the region no sensor sees.
    """

    def __init__(self, sensors: Sequence):
        self.sensors = tuple(sensors)

    def __len__(self) -> int:
        return 1 << len(self.sensors)

    @property
    def subregions(self) -> List[frozenset]:
        n = len(self.sensors)
        return [frozenset(s for s in range(n) if mask >> s & 1) for mask in range(len(self))]

    def locate(self, points) -> np.ndarray:
        """Subregion mask of every point (rows of ``points``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mask = np.zeros(len(pts), dtype=int)
        for s, sensor in enumerate(self.sensors):
            mask |= sensor.in_fov(pts).astype(int) << s
        return mask

    def locate_one(self, point) -> int:
        return int(self.locate(point)[0])

    def occupied(self, box, resolution: float = 1.0) -> set:
        """Masks of the subregions that meet a grid over ``box = ((x0, x1), (y0, y1))``."""
        (x0, x1), (y0, y1) = box
        xs = np.arange(x0, x1 + resolution / 2, resolution)
        ys = np.arange(y0, y1 + resolution / 2, resolution)
        grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
        return set(np.unique(self.locate(grid)).tolist())


def partition_fov(sensors: Sequence) -> FovPartition:
    return FovPartition(sensors)


def _region(spatial: GaussianDensity, partition: FovPartition) -> int:
    return partition.locate_one(spatial.mean[POS])


def region_counts(pmbs: Sequence[PmbDensity], partition: FovPartition) -> np.ndarray:
    """``N[s, l]``: number of Bernoullis of sensor ``s`` centered in subregion ``l``."""
    N = np.zeros((len(pmbs), len(partition)), dtype=int)
    for s, pmb in enumerate(pmbs):
        for b in pmb.bernoullis:
            N[s, _region(b.state.spatial, partition)] += 1
    return N


def determine_k(pmbs: Sequence[PmbDensity], partition: FovPartition) -> Tuple[int, List[int]]:
    """Number of fusion slots ``K = sum_l max_s N[s, l]`` and PPP part counts ``M_s = K - N_s``."""
    N = region_counts(pmbs, partition)
    K = int(N.max(axis=0).sum()) if len(pmbs) else 0
    return K, [K - int(n) for n in N.sum(axis=1)]


# --------------------------------------------------------------------------- PPP splitting


def split_ppp(ppp: PoissonIntensity, M: int) -> List[PoissonIntensity]:
    """Divide an intensity into ``M`` parts that sum to it exactly.

    With at least ``M`` components, whole components are dealt out so the
    part masses are as even as possible; otherwise every part gets every
    component scaled by ``1/M``.
    """
    if M < 1:
        raise ValueError("need at least one part")
    if M == 1:
        return [ppp]
    comps = ppp.components
    if len(comps) >= M:
        parts: List[list] = [[] for _ in range(M)]
        mass = np.zeros(M)
        for c in sorted(comps, key=lambda c: -c.weight):
            j = int(np.argmin(mass))
            parts[j].append(c)
            mass[j] += c.weight
        return [PoissonIntensity(p) for p in parts]
    return [ppp.scaled(1.0 / M) for _ in range(M)]


def reduce_part(part: PoissonIntensity) -> Optional[PppComponent]:
    """Single-component summary of a part (moment matched), or ``None`` if empty."""
    comps = part.components
    if not comps or part.mass <= 0:
        return None
    if len(comps) == 1:
        return comps[0]
    w = [c.weight for c in comps]
    return PppComponent(
        part.mass,
        moment_match(w, [c.spatial for c in comps]),
        gamma_moment_match(w, [c.rate_prior for c in comps]),
    )


# --------------------------------------------------------------------------- closed-form fusion


def _information(P: np.ndarray) -> Tuple[np.ndarray, float]:
    """Inverse and log-determinant of a covariance via Cholesky."""
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(
            f"cannot fuse a singular covariance (condition number {np.linalg.cond(P):.3e})"
        ) from None
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv, 2.0 * float(np.log(np.diag(L)).sum())


def fuse_gaussians(gs: Sequence[GaussianDensity], w: Sequence[float]) -> Tuple[GaussianDensity, float]:
    """Normalized weighted geometric mean of Gaussians, plus the log of the integral of the unnormalized product."""
    if len(gs) != len(w) or not gs:
        raise ValueError("need one weight per Gaussian")
    dim = gs[0].dim
    if any(g.dim != dim for g in gs):
        raise ValueError("all Gaussians must have the same dimension")
    info = np.zeros((dim, dim))
    vec = np.zeros(dim)
    quad = 0.0
    logdet_term = 0.0
    for g, wi in zip(gs, w):
        if wi == 0:
            continue
        Pinv, logdet = _information(g.cov)
        info += wi * Pinv
        iv = Pinv @ g.mean
        vec += wi * iv
        quad += wi * float(g.mean @ iv)
        logdet_term += wi * 0.5 * (dim * LOG_2PI + logdet)
    info = 0.5 * (info + info.T)
    P, logdet_bar = _information(info)
    logdet_bar = -logdet_bar
    mean = P @ vec
    log_c = 0.5 * (dim * LOG_2PI + logdet_bar) - logdet_term + 0.5 * (float(mean @ vec) - quad)
    return GaussianDensity(mean, condition_cov(P)), float(log_c)


def _existence(log_c: float, log_r: float, log_not_r: float) -> float:
    # r = C R / (NR + C R) evaluated in the log domain
    a = log_c + log_r
    if not np.isfinite(a):
        return 0.0
    if not np.isfinite(log_not_r):
        return 1.0
    return float(1.0 / (1.0 + math.exp(min(log_not_r - a, 700.0))))


def _weighted_log_r(rs, ws) -> Tuple[float, float]:
    r = np.clip(np.asarray(rs, dtype=float), R_CLAMP, 1.0 - R_CLAMP)
    ws = np.asarray(ws, dtype=float)
    return float(ws @ np.log(r)), float(ws @ np.log1p(-r))


def fuse_bernoullis(bs: Sequence[BernoulliComponent], w: Sequence[float]) -> BernoulliComponent:
    """Fused Bernoulli; the rate gamma and track id of the first input are kept."""
    g, log_c = fuse_gaussians([b.state.spatial for b in bs], w)
    log_r, log_not_r = _weighted_log_r([b.r for b in bs], w)
    r = _existence(log_c, log_r, log_not_r)
    return BernoulliComponent(r, EtState(bs[0].state.rate, g), bs[0].track_id)


def fuse_ppps(ps: Sequence, w: Sequence[float]) -> PoissonIntensity:
    """Fused single-component intensity; each input is a part or a ``PppComponent``."""
    comps = [p if isinstance(p, PppComponent) else reduce_part(p) for p in ps]
    active = [(c, wi) for c, wi in zip(comps, w) if wi > 0]
    if any(c is None or c.weight <= 0 for c, _ in active):
        return PoissonIntensity()
    g, log_c = fuse_gaussians([c.spatial for c, _ in active], [wi for _, wi in active])
    mu = math.exp(log_c + sum(wi * math.log(c.weight) for c, wi in active))
    return PoissonIntensity((PppComponent(mu, g, active[0][0].rate_prior),))


def fuse_mixed(bernoullis: Sequence[BernoulliComponent], ppp_parts: Sequence,
               w: Sequence[float]) -> BernoulliComponent:
    """Fusion of Bernoullis with PPP parts, which is again a Bernoulli.

    ``w`` lists the Bernoulli weights first, then the PPP part weights.
    """
    nb = len(bernoullis)
    if nb < 1 or not ppp_parts:
        raise ValueError("need at least one Bernoulli and one PPP part")
    if len(w) != nb + len(ppp_parts):
        raise ValueError("need one weight per input")
    parts = [p if isinstance(p, PppComponent) else reduce_part(p) for p in ppp_parts]
    wb, wp = list(w[:nb]), list(w[nb:])
    first = bernoullis[0]
    if any(p is None or p.weight <= 0 for p, wi in zip(parts, wp) if wi > 0):
        return BernoulliComponent(0.0, first.state, first.track_id)
    spatial = [b.state.spatial for b in bernoullis]
    ws = list(wb)
    for p, wi in zip(parts, wp):
        if wi > 0:
            spatial.append(p.spatial)
            ws.append(wi)
    g, log_c = fuse_gaussians(spatial, ws)
    log_r, log_not_r = _weighted_log_r([b.r for b in bernoullis], wb)
    log_mu = sum(wi * math.log(p.weight) for p, wi in zip(parts, wp) if wi > 0)
    r = _existence(log_c, log_r + log_mu, log_not_r)
    return BernoulliComponent(r, EtState(first.state.rate, g), first.track_id)


# --------------------------------------------------------------------------- fusion map


@dataclass(frozen=True)
class FusionComponent:
    kind: str  # "bernoulli" or "ppp"
    existence: float  # r for Bernoullis, mass for PPP parts
    spatial: Optional[GaussianDensity]
    subregion: int

    def __post_init__(self):
        if self.kind not in ("bernoulli", "ppp"):
            raise ValueError(f"unknown component kind {self.kind!r}")
        if self.kind == "bernoulli" and not 0 <= self.existence <= 1:
            raise ValueError("Bernoulli existence must be a probability")
        if self.kind == "ppp" and self.existence < 0:
            raise ValueError("PPP part mass must be nonnegative")


def _pair_cost(a: FusionComponent, b: FusionComponent, kld_gate: float, center_only: bool) -> float:
    both_b = a.kind == b.kind == "bernoulli"
    both_p = a.kind == b.kind == "ppp"
    if not both_b and not both_p and a.subregion != b.subregion:
        return math.inf
    if a.spatial is None or b.spatial is None:
        # an empty part can absorb anything in its subregion, at a high price
        return kld_gate
    if both_b and center_only:
        gate_cost = symmetric_kld(marginal(a.spatial, POS), marginal(b.spatial, POS))
        if gate_cost > kld_gate:
            return math.inf
    cost = symmetric_kld(a.spatial, b.spatial)
    if both_b and not center_only and cost > kld_gate:
        return math.inf
    return cost


def fusion_costs(ref: Sequence[FusionComponent], other: Sequence[FusionComponent],
                 kld_gate: float = 50.0, center_only: bool = True) -> np.ndarray:
    """Matrix of symmetric-KLD costs; ``inf`` marks forbidden pairs."""
    C = np.empty((len(ref), len(other)))
    for i, a in enumerate(ref):
        for j, b in enumerate(other):
            C[i, j] = _pair_cost(a, b, kld_gate, center_only)
    return C


def build_fusion_map(ref_components: Sequence[FusionComponent], other_components: Sequence[FusionComponent],
                     kld_gate: float = 50.0, center_only: bool = True) -> Tuple[np.ndarray, float]:
    """Best fusion map: ``perm[i]`` is the other-sensor slot fused with reference slot ``i``.

    Pairs that are forbidden (Bernoulli and PPP part in different subregions,
    or two Bernoullis beyond the gate) are never used; a row left without a
    feasible partner gets ``-1``.
    """
    if not ref_components or not other_components:
        return np.full(len(ref_components), -1, dtype=int), 0.0
    C = fusion_costs(ref_components, other_components, kld_gate, center_only)
    if not np.isfinite(C).any():
        return np.full(len(ref_components), -1, dtype=int), 0.0
    perm, total = solve(C, allow_forbidden=True)
    return perm, total


# --------------------------------------------------------------------------- PMB fusion


class _Part(NamedTuple):
    comp: Optional[PppComponent]  # reduced part used in the fusion (mass capped)
    region: int
    borrowed: bool  # shape taken from the whole intensity; its mass stays in the residual


class _Side(NamedTuple):
    bernoullis: List[BernoulliComponent]
    parts: List[_Part]
    residual: PoissonIntensity  # PPP mass that is not put in any slot


def _restrict(ppp: PoissonIntensity, partition: FovPartition) -> Dict[int, PoissonIntensity]:
    out: Dict[int, list] = {}
    for c in ppp.components:
        out.setdefault(_region(c.spatial, partition), []).append(c)
    return {l: PoissonIntensity(cs) for l, cs in out.items()}


def _side(pmb: PmbDensity, part_counts: Dict[int, int], partition: FovPartition, cap: float) -> _Side:
    restricted = _restrict(pmb.ppp, partition)
    parts: List[_Part] = []
    residual: List[PppComponent] = []
    used = set()
    for l in sorted(part_counts):
        M = part_counts[l]
        if M <= 0:
            continue
        source = restricted.get(l)
        if source is None or source.mass <= 0:
            # nothing undetected in this subregion: fall back to the whole intensity
            source = pmb.ppp
        else:
            used.add(l)
        for piece in split_ppp(source, M):
            comp = reduce_part(piece)
            if comp is not None and comp.weight > cap:
                extra = comp.weight - cap
                residual.extend(piece.scaled(extra / comp.weight).components)
                comp = replace(comp, weight=cap)
            parts.append(_Part(comp, l, source is pmb.ppp))
    for l, inten in restricted.items():
        if l not in used:
            residual.extend(inten.components)
    return _Side(list(pmb.bernoullis), parts, PoissonIntensity(residual))


def _components(side: _Side, partition: FovPartition) -> List[FusionComponent]:
    out = [FusionComponent("bernoulli", b.r, b.state.spatial, _region(b.state.spatial, partition))
           for b in side.bernoullis]
    out += [FusionComponent("ppp", p.comp.weight if p.comp else 0.0, p.comp.spatial if p.comp else None,
                            p.region) for p in side.parts]
    return out


class _PairResult(NamedTuple):
    pmb: PmbDensity
    origin: List[Tuple[Optional[int], Optional[int]]]  # per fused Bernoulli: (ref index, other index)
    part_rates: List[Tuple[GammaDensity, GammaDensity]]  # rates used when an origin is a PPP part


def _slot_plan(pmbs, partition, extra=None):
    N = region_counts(pmbs, partition)
    K_l = N.max(axis=0)
    if extra is not None:
        K_l = K_l + extra
    return [{l: int(K_l[l] - N[s, l]) for l in range(len(partition)) if K_l[l] - N[s, l] > 0}
            for s in range(len(pmbs))]


def _fuse_pair(a: PmbDensity, b: PmbDensity, wa: float, wb: float, partition: FovPartition,
               cfg: FusionConfig, next_id: int) -> _PairResult:
    plan = _slot_plan([a, b], partition)
    sa = _side(a, plan[0], partition, cfg.part_mass_cap)
    sb = _side(b, plan[1], partition, cfg.part_mass_cap)
    ca, cb = _components(sa, partition), _components(sb, partition)
    perm, _ = build_fusion_map(ca, cb, cfg.kld_gate, cfg.gate_on_center)

    unmatched = [i for i in range(len(sa.bernoullis)) if perm[i] < 0]
    inv = np.full(len(cb), -1)
    inv[perm[perm >= 0]] = np.flatnonzero(perm >= 0)
    unmatched_b = [j for j in range(len(sb.bernoullis)) if inv[j] < 0]
    if unmatched or unmatched_b:
        # the footnote slot count was infeasible: give every Bernoulli a spare part
        extra = region_counts([a, b], partition).sum(axis=0)
        plan = _slot_plan([a, b], partition, extra)
        sa = _side(a, plan[0], partition, cfg.part_mass_cap)
        sb = _side(b, plan[1], partition, cfg.part_mass_cap)
        ca, cb = _components(sa, partition), _components(sb, partition)
        perm, _ = build_fusion_map(ca, cb, cfg.kld_gate, cfg.gate_on_center)

    na, nb = len(sa.bernoullis), len(sb.bernoullis)
    fused_b: List[BernoulliComponent] = []
    origin, part_rates = [], []
    ppp_out: List[PppComponent] = []
    for i, j in enumerate(perm):
        if j < 0:
            continue
        j = int(j)
        if i < na and j < nb:
            fused_b.append(fuse_bernoullis([sa.bernoullis[i], sb.bernoullis[j]], [wa, wb]))
            origin.append((i, j))
            part_rates.append((None, None))
        elif i < na:
            part = sb.parts[j - nb]
            fused_b.append(fuse_mixed([sa.bernoullis[i]], [_as_part(part)], [wa, wb]))
            origin.append((i, None))
            part_rates.append((None, _part_rate(part, sa.bernoullis[i])))
        elif j < nb:
            part = sa.parts[i - na]
            bern = sb.bernoullis[j]
            f = fuse_mixed([bern], [_as_part(part)], [wb, wa])
            fused_b.append(BernoulliComponent(f.r, f.state, next_id))
            next_id += 1
            origin.append((None, j))
            part_rates.append((_part_rate(part, bern), None))
        else:
            pa, pb = sa.parts[i - na], sb.parts[j - nb]
            if pa.borrowed or pb.borrowed:
                ppp_out.extend(_own_content(pa, wa) + _own_content(pb, wb))
            else:
                ppp_out.extend(fuse_ppps([_as_part(pa), _as_part(pb)], [wa, wb]).components)
    # slots that found no partner keep their own content, weighted like the residuals
    taken = set(int(x) for x in perm if x >= 0)
    for i in range(len(ca)):
        if perm[i] < 0:
            if i < na:
                fused_b.append(sa.bernoullis[i])
                origin.append((i, None))
                part_rates.append((None, sa.bernoullis[i].state.rate))
            else:
                ppp_out.extend(_own_content(sa.parts[i - na], wa))
    for j in range(len(cb)):
        if j not in taken:
            if j < nb:
                bern = sb.bernoullis[j]
                fused_b.append(BernoulliComponent(bern.r, bern.state, next_id))
                next_id += 1
                origin.append((None, j))
                part_rates.append((bern.state.rate, None))
            else:
                ppp_out.extend(_own_content(sb.parts[j - nb], wb))
    ppp = PoissonIntensity(ppp_out) + sa.residual.scaled(wa) + sb.residual.scaled(wb)
    ppp = PoissonIntensity(c for c in ppp.components if c.weight > 0)
    return _PairResult(PmbDensity(ppp, fused_b), origin, part_rates)


def _own_content(p: _Part, w: float) -> List[PppComponent]:
    if p.comp is None or p.borrowed:
        return []
    return [replace(p.comp, weight=w * p.comp.weight)]


def _as_part(p: _Part):
    return p.comp if p.comp is not None else PoissonIntensity()


def _part_rate(p: _Part, fallback: BernoulliComponent) -> GammaDensity:
    return p.comp.rate_prior if p.comp is not None else fallback.state.rate


def merge_identical(ppp: PoissonIntensity) -> PoissonIntensity:
    """Sum the weights of components with identical Gaussian and rate prior."""
    out: List[PppComponent] = []
    for c in ppp.components:
        for k, o in enumerate(out):
            if (o.rate_prior == c.rate_prior and np.array_equal(o.spatial.mean, c.spatial.mean)
                    and np.array_equal(o.spatial.cov, c.spatial.cov)):
                out[k] = replace(o, weight=o.weight + c.weight)
                break
        else:
            out.append(c)
    return PoissonIntensity(out)


def fuse_pmbs_per_sensor(pmbs: Sequence[PmbDensity], cfg: FusionConfig, sensors,
                         partition: Optional[FovPartition] = None) -> List[PmbDensity]:
    """Fused PMB as seen by each sensor.

    All returned PMBs share existence probabilities, spatial densities, track
    ids and the PPP; the Bernoulli rate gammas are those of the respective
    sensor's matched component.
    """
    if len(pmbs) < 2:
        raise ValueError("fusion needs at least two posteriors")
    if len(cfg.weights) != len(pmbs):
        raise ValueError(f"{len(cfg.weights)} fusion weights for {len(pmbs)} posteriors")
    partition = partition if partition is not None else partition_fov(sensors)
    next_id = max((b.track_id for p in pmbs for b in p.bernoullis), default=-1) + 1

    acc = pmbs[0]
    rates = [[b.state.rate for b in acc.bernoullis]]  # rates[s][k] for the k-th accumulated Bernoulli
    w_acc = cfg.weights[0]
    for s in range(1, len(pmbs)):
        total = w_acc + cfg.weights[s]
        wa, wb = (w_acc / total, cfg.weights[s] / total) if total > 0 else (0.5, 0.5)
        res = _fuse_pair(acc, pmbs[s], wa, wb, partition, cfg, next_id)
        next_id = max([next_id] + [b.track_id + 1 for b in res.pmb.bernoullis])
        new_rates = [[] for _ in range(s + 1)]
        for (ia, ib), (ra, rb) in zip(res.origin, res.part_rates):
            for t in range(s):
                new_rates[t].append(rates[t][ia] if ia is not None else ra)
            new_rates[s].append(pmbs[s].bernoullis[ib].state.rate if ib is not None else rb)
        acc, rates, w_acc = res.pmb, new_rates, total

    keep = [k for k, b in enumerate(acc.bernoullis) if b.r >= cfg.recycle_threshold]
    moved = [PppComponent(b.r, b.state.spatial, b.state.rate)
             for b in acc.bernoullis if 0 < b.r < cfg.recycle_threshold]
    ppp = merge_identical(acc.ppp + PoissonIntensity(moved))
    out = []
    for s in range(len(pmbs)):
        bern = [BernoulliComponent(acc.bernoullis[k].r, EtState(rates[s][k], acc.bernoullis[k].state.spatial),
                                   acc.bernoullis[k].track_id) for k in keep]
        out.append(PmbDensity(ppp, bern))
    return out


def fuse_pmbs(pmbs: Sequence[PmbDensity], cfg: FusionConfig, sensors,
              partition: Optional[FovPartition] = None) -> PmbDensity:
    """Fused PMB carrying the first (reference) sensor's rate gammas."""
    return fuse_pmbs_per_sensor(pmbs, cfg, sensors, partition)[0]
