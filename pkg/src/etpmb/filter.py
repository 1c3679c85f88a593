"""Poisson multi-Bernoulli filter for extended targets (one sensor per update).

Each update clusters the scan into measurement cells, enumerates the best
data-association hypotheses over cells, and keeps the multi-Bernoulli of the
single highest-weight hypothesis. Undetected targets live in the PPP.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import DBSCAN

from .densities import (
    N_KIN,
    POS,
    BernoulliComponent,
    EtState,
    GammaDensity,
    GaussianDensity,
    PmbDensity,
    PoissonIntensity,
    PppComponent,
    gamma_moment_match,
)
from .gp_extent import GpHyperParams, MotionParams, ekf_predict, ekf_update, rate_log_likelihood

log = logging.getLogger(__name__)

NEW = -1  # association label: cell explains a new target (or clutter when singleton)


class NoFeasibleHypothesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterModel:
    birth: PoissonIntensity
    motion: MotionParams
    gp: GpHyperParams
    p_detect: float = 0.99
    clutter_rate: float = 2.0
    clutter_density: float = 1.0 / 400.0**2
    dbscan_eps: float = 4.0
    dbscan_minpts: int = 4
    recycle_threshold: float = 0.1
    existence_threshold: float = 0.5
    max_hypotheses: int = 100
    gate: float = 5.0
    ppp_prune: float = 1e-5
    max_ppp_components: int = 50
    qd_exact: bool = True
    ekf_iterations: int = 5

    def __post_init__(self):
        for name in ("p_detect", "recycle_threshold", "existence_threshold"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.clutter_rate < 0 or self.dbscan_eps <= 0 or self.max_hypotheses < 1:
            raise ValueError("invalid filter model parameters")


@dataclass(frozen=True)
class MeasurementCell:
    detections: np.ndarray
    cell_id: int

    def __post_init__(self):
        d = np.asarray(self.detections, dtype=float).reshape(-1, 2)
        if d.shape[0] < 1:
            raise ValueError("a measurement cell needs at least one detection")
        object.__setattr__(self, "detections", d)

    def __len__(self):
        return self.detections.shape[0]


class DaHypothesis(NamedTuple):
    log_weight: float
    assignments: Dict[int, int]  # cell_id -> track index into the Bernoulli list, or NEW


# --------------------------------------------------------------------------- predict


def predict(pmb: PmbDensity, m: FilterModel) -> PmbDensity:
    ps = m.motion.p_survival
    survivors = tuple(
        PppComponent(c.weight * ps, *_predict_parts(c.spatial, c.rate_prior, m))
        for c in pmb.ppp.components
    )
    bernoullis = tuple(
        BernoulliComponent(b.r * ps, ekf_predict(b.state, m.motion, m.gp), b.track_id)
        for b in pmb.bernoullis
    )
    return PmbDensity(PoissonIntensity(survivors) + m.birth, bernoullis)


def _predict_parts(spatial, rate, m):
    e = ekf_predict(EtState(rate, spatial), m.motion, m.gp)
    return e.spatial, e.rate


# --------------------------------------------------------------------------- clustering


def cluster(measurements, eps: float, minpts: int) -> List[MeasurementCell]:
    """DBSCAN cells; noise points become singleton cells."""
    Z = np.asarray(measurements, dtype=float).reshape(-1, 2)
    if Z.shape[0] == 0:
        return []
    labels = DBSCAN(eps=eps, min_samples=minpts).fit_predict(Z)
    groups = [Z[labels == k] for k in range(labels.max() + 1)]
    groups += [Z[i:i + 1] for i in np.flatnonzero(labels < 0)]
    return [MeasurementCell(g, i) for i, g in enumerate(groups)]


# --------------------------------------------------------------------------- update helpers


def detection_probability(m: FilterModel, sensor, spatial: GaussianDensity) -> float:
    """Detection probability of a target, tapered across the field-of-view edge.

    Inside the field of view by more than the mean extent radius it is
    ``p_detect``; it falls linearly to zero as the center moves from one
    radius inside to one radius outside. Without a field of view it is
    ``p_detect`` everywhere.
    """
    depth = getattr(sensor, "fov_depth", None)
    if depth is None:
        return m.p_detect
    radius = max(_mean_radius(spatial), 1.0)
    s = float(depth(spatial.mean[POS])[0])
    return m.p_detect * min(max(0.5 + s / (2 * radius), 0.0), 1.0)


def _mean_radius(spatial: GaussianDensity) -> float:
    return float(np.max(np.abs(spatial.mean[N_KIN:]))) if spatial.dim > N_KIN else 0.0


def pose_of(sensor):
    return getattr(sensor, "pose", sensor)


def expected_qd(rate: GammaDensity, pd: float, exact: bool = True) -> float:
    """Expectation of the missed-detection probability over the gamma rate."""
    if exact:
        miss_all = (rate.beta / (rate.beta + 1.0)) ** rate.alpha
    else:
        miss_all = math.exp(-rate.mean)
    return 1.0 - pd + pd * miss_all


def missed_rate(rate: GammaDensity, pd: float) -> GammaDensity:
    """Gamma posterior (moment matched) after a missed detection."""
    if pd <= 0:
        return rate
    w_undetected = 1.0 - pd
    w_zero = pd * (rate.beta / (rate.beta + 1.0)) ** rate.alpha
    if w_undetected <= 0:
        return GammaDensity(rate.alpha, rate.beta + 1.0)
    return gamma_moment_match([w_undetected, w_zero], [rate, GammaDensity(rate.alpha, rate.beta + 1.0)])


def _gated(cell: MeasurementCell, spatial: GaussianDensity, pose, gate: float) -> bool:
    """Centroid gate on the center marginal, inflated by the mean extent."""
    radius = _mean_radius(spatial)
    S = spatial.cov[POS, POS] + (radius**2 + 1.0) * np.eye(2) + pose.meas_cov
    d = cell.detections.mean(axis=0) - spatial.mean[POS]
    return float(d @ np.linalg.solve(S, d)) < gate * gate


class _CellTerms(NamedTuple):
    new_log: float  # log L_C for the new/clutter explanation
    new_r: float
    new_state: Optional[EtState]
    track_log: Dict[int, float]  # track index -> log(r p_D l_C)
    track_state: Dict[int, EtState]


def single_point_loglik(z, e: EtState, pose) -> float:
    """Log likelihood of a lone detection, normalized over the plane.

    The contour measurement model leaves the tangential residual of a single
    point identically zero, which overstates its likelihood against clutter.
    A lone point is instead scored as a Gaussian around the center spread by
    the extent, ``N(z; c, P_cc + (rho^2/2) I + R)``, where ``rho^2`` is the
    mean squared extent radius (the covariance of a point uniform on a circle).
    """
    spatial = e.spatial
    ext = spatial.mean[N_KIN:]
    spread = 0.5 * float(np.mean(ext * ext)) if ext.size else 0.0
    S = spatial.cov[POS, POS] + spread * np.eye(2) + pose.meas_cov
    d = np.asarray(z, dtype=float).reshape(2) - spatial.mean[POS]
    _, logdet = np.linalg.slogdet(S)
    maha = float(d @ np.linalg.solve(S, d))
    return rate_log_likelihood(e.rate, 1) - math.log(2 * math.pi) - 0.5 * logdet - 0.5 * maha


def _cell_terms(cell, pmb, pds, sensor, m) -> _CellTerms:
    pose = pose_of(sensor)
    single = len(cell) == 1
    # undetected-target explanation
    logs, states = [], []
    comps = pmb.ppp.components
    gated = [j for j, c in enumerate(comps) if _gated(cell, c.spatial, pose, m.gate)]
    if not gated and not single:
        gated = list(range(len(comps)))
    # screen with a single linearization; only the dominant component is iterated
    for j in gated:
        c = comps[j]
        pd = detection_probability(m, sensor, c.spatial)
        if pd <= 0 or c.weight <= 0:
            continue
        e = EtState(c.rate_prior, c.spatial)
        if single:
            ll = single_point_loglik(cell.detections[0], e, pose)
        else:
            _, ll = ekf_update(e, cell.detections, pose, m.gp)
        logs.append(math.log(c.weight * pd) + ll)
        states.append((j, pd))
    best_state = None
    if logs:
        k = int(np.argmax(logs))
        j, pd = states[k]
        c = comps[j]
        best_state, ll = ekf_update(EtState(c.rate_prior, c.spatial), cell.detections, pose, m.gp,
                                    iterations=m.ekf_iterations)
        if not single:
            logs[k] = math.log(c.weight * pd) + ll
    log_d = logsumexp(logs) if logs else -math.inf
    if single:
        log_kappa = math.log(m.clutter_rate * m.clutter_density) if m.clutter_rate > 0 else -math.inf
        new_log = np.logaddexp(log_kappa, log_d)
        new_r = math.exp(log_d - new_log) if np.isfinite(new_log) else 0.0
    else:
        new_log, new_r = log_d, 1.0

    track_log, track_state = {}, {}
    for i, b in enumerate(pmb.bernoullis):
        if pds[i] <= 0 or b.r <= 0 or not _gated(cell, b.state.spatial, pose, m.gate):
            continue
        state, ll = ekf_update(b.state, cell.detections, pose, m.gp, iterations=m.ekf_iterations)
        if single:
            ll = single_point_loglik(cell.detections[0], b.state, pose)
        track_log[i] = math.log(b.r * pds[i]) + ll
        track_state[i] = state
    return _CellTerms(float(new_log), new_r, best_state, track_log, track_state)


def _top_hypotheses(terms: Sequence[_CellTerms], miss_log: Sequence[float], k: int):
    """Exact k best assignments of cells to {new, one unused track} by branch and bound."""
    base = float(np.sum(miss_log))
    options = []
    for t in terms:
        opts = [(t.new_log, NEW)] + [(v - miss_log[i], i) for i, v in t.track_log.items()]
        opts = [o for o in opts if np.isfinite(o[0])]
        options.append(sorted(opts, key=lambda o: -o[0]))
    if any(not o for o in options):
        raise NoFeasibleHypothesisError("a measurement cell has no feasible explanation")
    optimistic = np.cumsum([o[0][0] for o in options][::-1])[::-1].tolist() + [0.0]

    best: List[Tuple[float, int, tuple]] = []  # min-heap of (score, tiebreak, choice)
    counter = itertools.count()

    def visit(ci, score, used, choice):
        if len(best) == k and score + optimistic[ci] <= best[0][0]:
            return
        if ci == len(options):
            item = (score, -next(counter), tuple(choice))
            if len(best) < k:
                heapq.heappush(best, item)
            else:
                heapq.heapreplace(best, item)
            return
        for val, lab in options[ci]:
            if lab != NEW and lab in used:
                continue
            choice.append(lab)
            if lab != NEW:
                used.add(lab)
            visit(ci + 1, score + val, used, choice)
            choice.pop()
            if lab != NEW:
                used.discard(lab)

    visit(0, base, set(), [])
    if not best:
        raise NoFeasibleHypothesisError("no valid data association hypothesis")
    return sorted(((s, c) for s, _, c in best), key=lambda sc: -sc[0])


def enumerate_hypotheses(pmb: PmbDensity, cells: Sequence[MeasurementCell], sensor, m: FilterModel):
    """Normalized data-association hypotheses, best first, plus the per-cell terms."""
    pds = [detection_probability(m, sensor, b.state.spatial) for b in pmb.bernoullis]
    qds = [expected_qd(b.state.rate, pd, m.qd_exact) for b, pd in zip(pmb.bernoullis, pds)]
    miss_log = [math.log(1 - b.r + b.r * q) for b, q in zip(pmb.bernoullis, qds)]
    terms = [_cell_terms(c, pmb, pds, sensor, m) for c in cells]
    top = _top_hypotheses(terms, miss_log, m.max_hypotheses)
    norm = logsumexp([s for s, _ in top])
    hyps = [DaHypothesis(s - norm, {c.cell_id: lab for c, lab in zip(cells, choice)}) for s, choice in top]
    return hyps, terms, pds, qds


def update(pmb: PmbDensity, cells: Sequence[MeasurementCell], sensor, m: FilterModel) -> PmbDensity:
    """Measurement update keeping the highest-weight multi-Bernoulli.

    ``sensor`` is a ``SensorModel`` (field of view gates the detection
    probability) or a bare ``SensorPose`` (detection probability everywhere).
    """
    cells = list(cells)
    if cells:
        hyps, terms, pds, qds = enumerate_hypotheses(pmb, cells, sensor, m)
        best = hyps[0].assignments
    else:
        pds = [detection_probability(m, sensor, b.state.spatial) for b in pmb.bernoullis]
        qds = [expected_qd(b.state.rate, pd, m.qd_exact) for b, pd in zip(pmb.bernoullis, pds)]
        terms, best = [], {}

    detected = {lab: ci for ci, lab in enumerate(best[c.cell_id] for c in cells) if lab != NEW}
    next_id = max((b.track_id for b in pmb.bernoullis), default=-1) + 1
    out = []
    for i, b in enumerate(pmb.bernoullis):
        if i in detected:
            out.append(BernoulliComponent(1.0, terms[detected[i]].track_state[i], b.track_id))
        elif pds[i] > 0:
            den = 1 - b.r + b.r * qds[i]
            out.append(BernoulliComponent(b.r * qds[i] / den,
                                          EtState(missed_rate(b.state.rate, pds[i]), b.state.spatial),
                                          b.track_id))
        else:
            out.append(b)
    for c, t in zip(cells, terms):
        if best[c.cell_id] == NEW and t.new_state is not None and t.new_r > 0:
            out.append(BernoulliComponent(t.new_r, t.new_state, next_id))
            next_id += 1

    undetected = []
    for c in pmb.ppp.components:
        pd = detection_probability(m, sensor, c.spatial)
        q = expected_qd(c.rate_prior, pd, m.qd_exact)
        undetected.append(PppComponent(c.weight * q, c.spatial, missed_rate(c.rate_prior, pd)))
    ppp = PoissonIntensity(undetected).pruned(m.ppp_prune, m.max_ppp_components)
    return PmbDensity(ppp, out)


def recycle(pmb: PmbDensity, threshold: float) -> PmbDensity:
    """Move Bernoullis with existence below ``threshold`` into the PPP."""
    keep, moved = [], []
    for b in pmb.bernoullis:
        if b.r < threshold:
            if b.r > 0:
                moved.append(PppComponent(b.r, b.state.spatial, b.state.rate))
        else:
            keep.append(b)
    if not moved:
        return pmb
    return PmbDensity(pmb.ppp + PoissonIntensity(moved), keep)


def extract_estimates(pmb: PmbDensity, r_th: float) -> List[Tuple[int, EtState]]:
    return [(b.track_id, b.state) for b in pmb.bernoullis if b.r > r_th]


@dataclass
class EtPmbFilter:
    """Stateful wrapper running predict/update/recycle for one filter instance."""

    model: FilterModel
    pmb: PmbDensity = field(default_factory=PmbDensity)

    def predict(self) -> None:
        self.pmb = predict(self.pmb, self.model)

    def update(self, measurements, sensor) -> None:
        cells = cluster(measurements, self.model.dbscan_eps, self.model.dbscan_minpts)
        self.pmb = update(self.pmb, cells, sensor, self.model)
        self.pmb = recycle(self.pmb, self.model.recycle_threshold)

    def estimates(self) -> List[Tuple[int, EtState]]:
        return extract_estimates(self.pmb, self.model.existence_threshold)
