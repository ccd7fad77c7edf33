"""Shock propagation over the production network.

A failure scenario caps every firm's production at psi in [0, 1]. Two
independent recursions then run to a fixed point: downstream (buyers lose
inputs when suppliers fail, damped by how replaceable each supplier is
within its sector) and upstream (suppliers lose demand when buyers fail).
Both recursions are synchronous and monotone, so they always terminate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .netcore import ProductionNetwork, FirmRecord, sector_is_physical
from .prodfun import ScenarioSpec, ESS_ALL, ESS_PHYSICAL


@dataclass(frozen=True)
class ImpactMatrices:
    """Sparse per-edge impact coefficients in iteration-ready layout.

    Downstream entries live in arrays sorted by (buyer, supplier); each entry
    carries the supplier's sector, an essential/non-essential tag, and a
    constraint-group id. Essential edges of one buyer form one group per
    supplier sector, all non-essential edges of a buyer share a single pooled
    group. Upstream entries are sorted by (supplier, buyer); u_resid is the
    demand share of each supplier not covered by observed buyers, held at
    full level during the iteration.
    """

    n: int
    n_sectors: int
    s_out: np.ndarray
    s_in: np.ndarray
    sector_of: np.ndarray
    # downstream (supplier -> buyer) entries
    d_sup: np.ndarray
    d_buy: np.ndarray
    lam_d: np.ndarray
    d_ess: np.ndarray
    d_sector: np.ndarray
    d_group: np.ndarray
    n_groups: int
    group_buyer: np.ndarray
    group_sector: np.ndarray     # sector id per group, -1 for the pooled group
    present_buyers: np.ndarray   # buyers that have at least one in-edge
    seg_starts: np.ndarray       # first group index per present buyer
    # upstream (buyer -> supplier) entries
    u_sup: np.ndarray
    u_buy: np.ndarray
    lam_u: np.ndarray
    u_resid: np.ndarray
    # compiled sparse operators driving the iteration; entries mirror the
    # arrays above and sum in the same element order
    down_op: sparse.csr_array    # (group, supplier) -> lam_d
    up_op: sparse.csr_array      # (supplier, buyer) -> lam_u
    sector_op: sparse.csr_array  # (sector, firm) -> s_out


@dataclass(frozen=True)
class ExogenousShock:
    """Per-firm cap on production imposed from outside the network."""

    psi: np.ndarray

    def __post_init__(self):
        # always copy: the shock owns (and freezes) its vector, never the caller's
        psi = np.array(self.psi, dtype=np.float64)
        if psi.ndim != 1:
            raise ValueError("psi must be a 1-d vector")
        if np.any(psi < 0) or np.any(psi > 1):
            raise ValueError("psi values must lie in [0, 1]")
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)


@dataclass(frozen=True)
class CascadeState:
    """Snapshot of one iteration.

    sigma and pi_tilde are the replaceability factors and per-group input
    availabilities applied in the step that produced these levels; for the
    initial state they are the no-shock values. pi_tilde is aligned with the
    constraint groups of the matrices that produced the state.
    """

    t: int
    h_d: np.ndarray
    h_u: np.ndarray
    sigma: np.ndarray
    pi_tilde: np.ndarray


@dataclass(frozen=True)
class CascadeResult:
    """Converged (or capped) outcome of one failure scenario."""

    h_final: np.ndarray
    h_d_final: np.ndarray
    h_u_final: np.ndarray
    T: int
    converged: bool
    trace: tuple[CascadeState, ...] | None = None


def build_impact_matrices(net: ProductionNetwork, spec: ScenarioSpec) -> ImpactMatrices:
    """Per-edge impact coefficients for one scenario.

    For an edge from supplier j to buyer i: if j's sector is essential for i,
    the downstream entry is j's share among i's same-sector inputs; otherwise
    it is j's share of all of i's inputs. The upstream entry is always buyer
    i's share of j's sales.
    """
    n = net.n
    n_sectors = len(net.sectors)
    sup, buy, w = net.sup, net.buy, net.w
    s_in, s_out = net.s_in, net.s_out

    phys_sector = np.array([sector_is_physical(c) for c in net.sectors], dtype=bool)
    cls = spec.essential_class
    ess = (cls[buy] == ESS_ALL) | ((cls[buy] == ESS_PHYSICAL) & phys_sector[net.sector_of[sup]])

    # downstream order: sorted by (buyer, supplier)
    d_ord = np.lexsort((sup, buy))
    d_sup = sup[d_ord]
    d_buy = buy[d_ord]
    d_w = w[d_ord]
    d_ess = ess[d_ord]
    d_sector = net.sector_of[d_sup]

    # denominators of essential entries: same-sector input totals per buyer
    pair_key = d_buy * n_sectors + d_sector
    pair_uniq, pair_inv = np.unique(pair_key, return_inverse=True)
    pair_sum = np.bincount(pair_inv, weights=d_w)
    lam_d = np.where(d_ess, d_w / pair_sum[pair_inv], d_w / s_in[d_buy])

    # constraint groups: one per (buyer, essential sector), one pooled per buyer
    gkey = d_buy * np.int64(n_sectors + 1) + np.where(d_ess, 1 + d_sector, 0)
    guniq, d_group = np.unique(gkey, return_inverse=True)
    group_buyer = guniq // (n_sectors + 1)
    group_sector = guniq % (n_sectors + 1) - 1
    present_buyers, seg_starts = np.unique(group_buyer, return_index=True)

    # upstream entries use the canonical (supplier, buyer) order directly
    lam_u = w / s_out[sup]
    u_resid = 1.0 - np.bincount(sup, weights=lam_u, minlength=n)
    np.clip(u_resid, 0.0, 1.0, out=u_resid)

    arrays = (d_sup, d_buy, lam_d, d_ess, d_sector, d_group, group_buyer,
              group_sector, present_buyers, seg_starts, lam_u, u_resid)
    for a in arrays:
        a.flags.writeable = False
    down_op, up_op, sector_op = _operators(
        n, n_sectors, len(guniq), d_group, d_sup, lam_d, sup, buy, lam_u,
        net.sector_of, s_out)
    return ImpactMatrices(
        n=n, n_sectors=n_sectors, s_out=s_out, s_in=s_in, sector_of=net.sector_of,
        d_sup=d_sup, d_buy=d_buy, lam_d=lam_d, d_ess=d_ess, d_sector=d_sector,
        d_group=d_group, n_groups=len(guniq), group_buyer=group_buyer,
        group_sector=group_sector, present_buyers=present_buyers, seg_starts=seg_starts,
        u_sup=sup, u_buy=buy, lam_u=lam_u, u_resid=u_resid,
        down_op=down_op, up_op=up_op, sector_op=sector_op,
    )


def _operators(n, n_sectors, n_groups, d_group, d_sup, lam_d, u_sup, u_buy, lam_u,
               sector_of, s_out):
    """Compile the edge arrays into CSR operators.

    One matrix-vector product replaces a gather-multiply-scatter chain; rows
    accumulate left to right over ascending column indices, the same order
    the plain bincount formulation uses, so results are bit-identical.
    """
    down = sparse.csr_array((lam_d, (d_group, d_sup)), shape=(n_groups, n))
    up = sparse.csr_array((lam_u, (u_sup, u_buy)), shape=(n, n))
    sec = sparse.csr_array((s_out, (sector_of, np.arange(n))), shape=(n_sectors, n))
    for op in (down, up, sec):
        op.sort_indices()
    return down, up, sec


def rescale_for_coverage(matrices: ImpactMatrices, firms: "tuple[FirmRecord, ...]") -> ImpactMatrices:
    """Shrink impact entries where income statements report unobserved trade.

    Upstream entries reaching supplier i shrink by min(1, s_out_i / revenue_i)
    because part of i's true demand never shows up in the network; the
    complement moves into u_resid and stays at full level. Downstream entries
    reaching buyer i shrink by min(1, s_in_i / material_cost_i) because part
    of i's true input basket is unobserved and assumed unshocked. Missing or
    zero figures leave entries unchanged.
    """
    n = matrices.n
    fac_u = np.ones(n)
    fac_d = np.ones(n)
    for i, f in enumerate(firms):
        if f.revenue is not None and f.revenue > 0:
            fac_u[i] = min(1.0, matrices.s_out[i] / f.revenue)
        if f.material_cost is not None and f.material_cost > 0:
            fac_d[i] = min(1.0, matrices.s_in[i] / f.material_cost)

    lam_u = matrices.lam_u * fac_u[matrices.u_sup]
    lam_d = matrices.lam_d * fac_d[matrices.d_buy]
    u_resid = 1.0 - np.bincount(matrices.u_sup, weights=lam_u, minlength=n)
    np.clip(u_resid, 0.0, 1.0, out=u_resid)
    for a in (lam_u, lam_d, u_resid):
        a.flags.writeable = False
    down_op, up_op, sector_op = _operators(
        n, matrices.n_sectors, matrices.n_groups, matrices.d_group, matrices.d_sup,
        lam_d, matrices.u_sup, matrices.u_buy, lam_u, matrices.sector_of, matrices.s_out)
    return dataclasses.replace(matrices, lam_d=lam_d, lam_u=lam_u, u_resid=u_resid,
                               down_op=down_op, up_op=up_op, sector_op=sector_op)


def _sigma_from(s_out: np.ndarray, sector_of: np.ndarray, n_sectors: int,
                h_d: np.ndarray) -> np.ndarray:
    """Replaceability factors: own out-strength over surviving sector output."""
    sector_live = np.bincount(sector_of, weights=s_out * h_d, minlength=n_sectors)
    denom = sector_live[sector_of]
    sigma = np.ones(len(s_out))
    np.divide(s_out, denom, out=sigma, where=denom > 0)
    np.minimum(sigma, 1.0, out=sigma)
    return sigma


def replaceability(state: CascadeState | np.ndarray, net: ProductionNetwork,
                   t: int | None = None) -> np.ndarray:
    """Replaceability factor of every firm given downstream levels.

    A firm's factor is its baseline out-strength divided by the surviving
    output of its whole sector (itself included), capped at 1. A sector with
    no surviving output gives factor 1: nothing is left to substitute with.
    Upstream levels play no role. Accepts a state or a raw h_d vector; t is
    informational only.
    """
    h_d = state.h_d if isinstance(state, CascadeState) else np.asarray(state, dtype=np.float64)
    return _sigma_from(net.s_out, net.sector_of, len(net.sectors), h_d)


def _advance(m: ImpactMatrices, h_d: np.ndarray, h_u: np.ndarray, psi: np.ndarray,
             sigma_fixed: np.ndarray | None):
    """One synchronous update; returns (h_d', h_u', sigma used, pi_tilde used)."""
    if sigma_fixed is not None:
        sigma = sigma_fixed
    else:
        sector_live = m.sector_op @ h_d
        denom = sector_live[m.sector_of]
        sigma = np.ones(m.n)
        np.divide(m.s_out, denom, out=sigma, where=denom > 0)
        np.minimum(sigma, 1.0, out=sigma)

    # relative input availability per constraint group; the per-firm weighted
    # drop is folded before the matvec so every edge costs one multiply-add
    q = sigma * (1.0 - h_d)
    pi_tilde = 1.0 - (m.down_op @ q)
    np.clip(pi_tilde, 0.0, 1.0, out=pi_tilde)

    hd_new = np.ones(m.n)
    if m.n_groups:
        hd_new[m.present_buyers] = np.minimum.reduceat(pi_tilde, m.seg_starts)
    np.clip(hd_new, 0.0, psi, out=hd_new)

    # upstream: demand-weighted buyer levels plus the unobserved remainder
    hu_new = (m.up_op @ h_u) + m.u_resid
    np.clip(hu_new, 0.0, psi, out=hu_new)
    return hd_new, hu_new, sigma, pi_tilde


def step(state: CascadeState, matrices: ImpactMatrices, params, psi: np.ndarray,
         sigma_fixed: np.ndarray | None = None) -> CascadeState:
    """One synchronous iteration from the given state.

    All firms read levels of iteration t and write t + 1. The exogenous cap
    psi re-enters both updates every iteration, so no firm recovers above it.
    params carries no extra coefficients here (updates are in relative terms)
    and is accepted for signature symmetry with the batch entry points.
    """
    psi = np.asarray(psi, dtype=np.float64)
    hd, hu, sigma, pit = _advance(matrices, state.h_d, state.h_u, psi, sigma_fixed)
    for a in (hd, hu, sigma, pit):
        a.flags.writeable = False
    return CascadeState(t=state.t + 1, h_d=hd, h_u=hu, sigma=sigma, pi_tilde=pit)


def initial_state(matrices: ImpactMatrices, sigma_fixed: np.ndarray | None = None) -> CascadeState:
    """All-ones state at t = 0 with its consistent diagnostics."""
    ones = np.ones(matrices.n)
    if sigma_fixed is not None:
        sigma = np.asarray(sigma_fixed, dtype=np.float64)
    else:
        sigma = _sigma_from(matrices.s_out, matrices.sector_of, matrices.n_sectors, ones)
    pit = np.ones(matrices.n_groups)
    for a in (ones, sigma, pit):
        a.flags.writeable = False
    return CascadeState(t=0, h_d=ones, h_u=ones, sigma=sigma, pi_tilde=pit)


def run_cascade(net: ProductionNetwork, matrices: ImpactMatrices, params,
                psi: np.ndarray, epsilon: float = 1e-2, max_iter: int = 1000,
                record_trace: bool = False,
                sigma_fixed: np.ndarray | None = None) -> CascadeResult:
    """Iterate the shock recursion to its fixed point.

    Starts from all-ones levels; the exogenous cap takes effect in the first
    iteration. Stops at the first iteration whose largest level decrement
    (downstream or upstream) is at most epsilon, or after max_iter iterations
    with converged = False. The final per-firm level is the minimum of the
    downstream and upstream levels.

    sigma_fixed freezes the replaceability factors (for example at all-ones
    to switch substitution off entirely); by default they are recomputed from
    the downstream levels every iteration.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if matrices.n == 0:
        raise ValueError("cannot run a cascade on an empty network")
    psi = ExogenousShock(psi).psi
    if len(psi) != matrices.n:
        raise ValueError(f"psi has length {len(psi)}, expected {matrices.n}")
    if sigma_fixed is not None:
        sigma_fixed = np.asarray(sigma_fixed, dtype=np.float64)

    h_d = np.ones(matrices.n)
    h_u = np.ones(matrices.n)
    trace: list[CascadeState] | None = None
    if record_trace:
        trace = [initial_state(matrices, sigma_fixed)]

    converged = False
    T = max_iter
    for t in range(1, max_iter + 1):
        hd_new, hu_new, sigma, pit = _advance(matrices, h_d, h_u, psi, sigma_fixed)
        dec = max(np.max(h_d - hd_new), np.max(h_u - hu_new))
        h_d, h_u = hd_new, hu_new
        if trace is not None:
            for a in (hd_new, hu_new, sigma, pit):
                a.flags.writeable = False
            trace.append(CascadeState(t=t, h_d=hd_new, h_u=hu_new, sigma=sigma, pi_tilde=pit))
        if dec <= epsilon:
            T = t
            converged = True
            break

    h_final = np.minimum(h_d, h_u)
    for a in (h_final, h_d, h_u):
        a.flags.writeable = False
    return CascadeResult(
        h_final=h_final, h_d_final=h_d, h_u_final=h_u, T=T, converged=converged,
        trace=tuple(trace) if trace is not None else None,
    )
