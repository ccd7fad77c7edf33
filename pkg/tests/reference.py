"""Slow dense re-implementation of the cascade used as a test oracle.

Everything here is written from the model rules directly: plain loops,
dense matrices, dictionaries keyed by firm id. No code is shared with the
package beyond the input dataclasses, so agreement between the two is
meaningful evidence rather than a tautology.
"""

from __future__ import annotations

import numpy as np

PHYS = {f"{p:02d}" for p in range(1, 46)}
SENTINEL = "unclassified"


def is_physical(code: str) -> bool:
    return code != SENTINEL and code[:2] in PHYS


def essential_lookup(scenario: str, buyer_code: str, supplier_code: str) -> bool:
    """Is an input from supplier_code essential for a buyer in buyer_code?"""
    if scenario == "lin":
        return False
    if scenario == "leo":
        return True
    if scenario == "mix":
        return is_physical(buyer_code)
    if scenario == "gl":
        return is_physical(buyer_code) and is_physical(supplier_code)
    raise AssertionError(scenario)


class DenseNet:
    """Dense W[j, i] = volume from supplier j to buyer i, plus firm metadata."""

    def __init__(self, firms, edges):
        self.ids = [f.firm_id for f in firms]
        self.code = {f.firm_id: (f.nace4 if f.nace4 else SENTINEL) for f in firms}
        self.revenue = {f.firm_id: f.revenue for f in firms}
        self.material_cost = {f.firm_id: f.material_cost for f in firms}
        self.pos = {fid: k for k, fid in enumerate(self.ids)}
        n = len(self.ids)
        W = np.zeros((n, n))
        for sid, bid, w in edges:
            if sid == bid:
                continue
            W[self.pos[sid], self.pos[bid]] += w
        self.W = W
        self.n = n
        self.s_out = W.sum(axis=1)
        self.s_in = W.sum(axis=0)


def dense_net(net) -> DenseNet:
    """Rebuild the dense view from a package network object."""
    edges = []
    for e in range(net.n_edges):
        edges.append((net.firms[net.sup[e]].firm_id,
                      net.firms[net.buy[e]].firm_id,
                      float(net.w[e])))
    return DenseNet(net.firms, edges)


def impact_coefficients(dn: DenseNet, scenario: str):
    """Per-edge downstream/upstream coefficients before coverage scaling.

    Returns (lam_d, essential mask, lam_u, list of sector codes per firm).
    lam_d[j, i]: essential edges carry j's share among i's inputs from j's
    sector, others j's share of all of i's inputs. lam_u[j, i]: buyer j's
    share of supplier i's sales.
    """
    n, W = dn.n, dn.W
    codes = [dn.code[fid] for fid in dn.ids]
    lam_d = np.zeros((n, n))
    ess = np.zeros((n, n), dtype=bool)
    for i in range(n):
        by_sector: dict[str, float] = {}
        for j in range(n):
            if W[j, i] > 0:
                by_sector[codes[j]] = by_sector.get(codes[j], 0.0) + W[j, i]
        total = sum(by_sector.values())
        for j in range(n):
            if W[j, i] <= 0:
                continue
            if essential_lookup(scenario, codes[i], codes[j]):
                ess[j, i] = True
                lam_d[j, i] = W[j, i] / by_sector[codes[j]]
            else:
                lam_d[j, i] = W[j, i] / total
    lam_u = np.zeros((n, n))
    for i in range(n):
        if dn.s_out[i] > 0:
            for j in range(n):
                if W[i, j] > 0:
                    lam_u[j, i] = W[i, j] / dn.s_out[i]
    return lam_d, ess, lam_u, codes


def coverage_factors(dn: DenseNet):
    """Receiver-side shrink factors from income-statement figures."""
    fu = np.ones(dn.n)
    fd = np.ones(dn.n)
    for k, fid in enumerate(dn.ids):
        rev = dn.revenue[fid]
        cost = dn.material_cost[fid]
        if rev is not None and rev > 0:
            fu[k] = min(1.0, dn.s_out[k] / rev)
        if cost is not None and cost > 0:
            fd[k] = min(1.0, dn.s_in[k] / cost)
    return fd, fu


def reference_cascade(dn: DenseNet, scenario: str, psi, epsilon=1e-2, max_iter=1000,
                      apply_coverage=True, sigma_fixed=None):
    """Run the synchronous recursion with explicit loops.

    Returns a dict with the per-iteration history of h_d, h_u and sigma plus
    the final levels, T and the convergence flag.
    """
    n = dn.n
    lam_d, ess, lam_u, codes = impact_coefficients(dn, scenario)
    if apply_coverage:
        fd, fu = coverage_factors(dn)
        lam_d = lam_d * fd[np.newaxis, :]
        lam_u = lam_u * fu[np.newaxis, :]
    resid = np.array([max(0.0, 1.0 - lam_u[:, i].sum()) for i in range(n)])

    psi = np.asarray(psi, dtype=float)
    h_d = np.ones(n)
    h_u = np.ones(n)
    hist_d, hist_u, hist_sigma = [h_d.copy()], [h_u.copy()], []

    def sigma_of(hd):
        if sigma_fixed is not None:
            return np.asarray(sigma_fixed, dtype=float).copy()
        out = np.ones(n)
        for k in range(n):
            alive = 0.0
            for l in range(n):
                if codes[l] == codes[k]:
                    alive += dn.s_out[l] * hd[l]
            if alive > 0:
                out[k] = min(1.0, dn.s_out[k] / alive)
        return out

    hist_sigma.append(sigma_of(np.ones(n)))
    T, converged = max_iter, False
    for t in range(1, max_iter + 1):
        sigma = sigma_of(h_d)
        hd_new = np.empty(n)
        for i in range(n):
            candidates = [1.0]
            sectors_here = {codes[j] for j in range(n) if ess[j, i]}
            for sec in sorted(sectors_here):
                pen = 0.0
                for j in range(n):
                    if ess[j, i] and codes[j] == sec:
                        pen += sigma[j] * lam_d[j, i] * (1.0 - h_d[j])
                candidates.append(1.0 - pen)
            pen = 0.0
            pooled = False
            for j in range(n):
                if lam_d[j, i] > 0 and not ess[j, i]:
                    pen += sigma[j] * lam_d[j, i] * (1.0 - h_d[j])
                    pooled = True
            if pooled:
                candidates.append(1.0 - pen)
            hd_new[i] = min(max(min(candidates), 0.0), psi[i])
        hu_new = np.empty(n)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += lam_u[j, i] * h_u[j]
            level = acc + resid[i]
            hu_new[i] = min(max(min(level, psi[i]), 0.0), 1.0)
        dec = max(np.max(h_d - hd_new), np.max(h_u - hu_new))
        h_d, h_u = hd_new, hu_new
        hist_d.append(h_d.copy())
        hist_u.append(h_u.copy())
        hist_sigma.append(sigma)
        if dec <= epsilon:
            T, converged = t, True
            break
    return {
        "h_d": hist_d, "h_u": hist_u, "sigma": hist_sigma,
        "h_final": np.minimum(h_d, h_u), "T": T, "converged": converged,
    }


def reference_esri(dn: DenseNet, scenario: str, epsilon=1e-2, max_iter=1000,
                   apply_coverage=True):
    """Index of every firm: total out-strength-weighted loss after its failure."""
    total = dn.s_out.sum()
    out = np.empty(dn.n)
    for k in range(dn.n):
        psi = np.ones(dn.n)
        psi[k] = 0.0
        res = reference_cascade(dn, scenario, psi, epsilon=epsilon,
                                max_iter=max_iter, apply_coverage=apply_coverage)
        out[k] = float(np.sum(dn.s_out * (1.0 - res["h_final"])) / total)
    return out


def reference_filter(events):
    """Long-term link filter done with dictionaries: >= 2 events, >= 90 days."""
    seen: dict[tuple[str, str], list] = {}
    for ev in events:
        if ev.supplier_id == ev.buyer_id:
            continue
        key = (ev.supplier_id, ev.buyer_id)
        if key not in seen:
            seen[key] = [0, ev.date, ev.date, 0.0]
        rec = seen[key]
        rec[0] += 1
        rec[1] = min(rec[1], ev.date)
        rec[2] = max(rec[2], ev.date)
        rec[3] += float(ev.amount)
    out = []
    for (sid, bid), (cnt, lo, hi, total) in sorted(seen.items()):
        if cnt >= 2 and (hi - lo).days >= 90:
            out.append((sid, bid, total))
    return out
