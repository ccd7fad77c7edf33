"""Production-function scenarios and generalized-Leontief calibration.

Every firm gets a partition of input categories into an essential set
(Leontief behaviour, output limited by the scarcest one) and a non-essential
set (linear behaviour, output proportional to their sum). Four stylized
scenarios fix that partition network-wide; parameters are then read off the
observed input volumes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .netcore import (
    SENTINEL_SECTOR,
    PHYSICAL_PREFIX_MAX,
    ProductionNetwork,
    input_matrix,
    sector_is_physical,
)


class Scenario(enum.Enum):
    """Network-wide input-partition rule."""

    LIN = "lin"   # every input non-essential for every firm
    LEO = "leo"   # every input essential for every firm
    MIX = "mix"   # physical firms all-essential, service firms all-non-essential
    GL = "gl"     # physical firms: physical inputs essential, service inputs linear


# per-firm essential-set classes
ESS_NONE = 0       # no essential inputs
ESS_PHYSICAL = 1   # input categories with prefixes 01-45 are essential
ESS_ALL = 2        # every input category is essential

PHYSICAL_PREFIXES = frozenset(f"{p:02d}" for p in range(1, PHYSICAL_PREFIX_MAX + 1))
SERVICE_PREFIXES = frozenset(f"{p:02d}" for p in range(PHYSICAL_PREFIX_MAX + 1, 100))
PREFIX_UNIVERSE = PHYSICAL_PREFIXES | SERVICE_PREFIXES | {SENTINEL_SECTOR}


@dataclass(frozen=True)
class ScenarioSpec:
    """Per-firm essential/non-essential partition of input categories.

    essential_class holds one of ESS_NONE, ESS_PHYSICAL, ESS_ALL per firm;
    the explicit prefix sets are exposed through essential_set and
    non_essential_set.
    """

    scenario: Scenario
    essential_class: np.ndarray

    def essential_set(self, firm: int) -> frozenset[str]:
        c = int(self.essential_class[firm])
        if c == ESS_ALL:
            return PREFIX_UNIVERSE
        if c == ESS_PHYSICAL:
            return PHYSICAL_PREFIXES
        return frozenset()

    def non_essential_set(self, firm: int) -> frozenset[str]:
        return PREFIX_UNIVERSE - self.essential_set(firm)

    def input_is_essential(self, firm: int, sector_code: str) -> bool:
        """Does firm treat inputs from the given sector as essential?"""
        c = int(self.essential_class[firm])
        if c == ESS_ALL:
            return True
        if c == ESS_NONE:
            return False
        return sector_is_physical(sector_code)


def assign_scenario(net: ProductionNetwork, scenario: Scenario) -> ScenarioSpec:
    """Apply one of the four partition rules to every firm.

    Physical firms are those with a 2-digit industry prefix in 01-45; the
    sentinel category counts as service.
    """
    physical = np.array([sector_is_physical(f.nace4) for f in net.firms], dtype=bool)
    cls = np.zeros(net.n, dtype=np.uint8)
    if scenario is Scenario.LIN:
        cls[:] = ESS_NONE
    elif scenario is Scenario.LEO:
        cls[:] = ESS_ALL
    elif scenario is Scenario.MIX:
        cls[physical] = ESS_ALL
    elif scenario is Scenario.GL:
        cls[physical] = ESS_PHYSICAL
    else:  # pragma: no cover
        raise ValueError(f"unknown scenario {scenario!r}")
    cls.flags.writeable = False
    return ScenarioSpec(scenario=scenario, essential_class=cls)


@dataclass(frozen=True)
class ProductionParams:
    """Calibrated generalized-Leontief parameters for every firm.

    alpha[i] maps each essential input sector with observed volume to its
    technical coefficient (input per unit of output). beta_tilde[i] is the
    fraction of output attainable with essential inputs alone, 1 for firms
    without inputs. Firms with zero baseline output keep empty alpha maps.
    """

    spec: ScenarioSpec
    x0: np.ndarray
    beta_tilde: np.ndarray
    alpha: tuple[dict[str, float], ...]
    essential_inputs: tuple[dict[str, float], ...]
    non_essential_input: np.ndarray
    input_total: np.ndarray


def calibrate(net: ProductionNetwork, spec: ScenarioSpec) -> ProductionParams:
    """Read technical coefficients off the observed network.

    Baseline output x0 is the firm's out-strength. For each essential sector
    with observed input volume, alpha is that volume divided by x0. beta_tilde
    is the essential share of total input value, with the convention 1 for
    firms that buy nothing.
    """
    rows = input_matrix(net)
    n = net.n
    x0 = np.array(net.s_out, dtype=np.float64)
    beta = np.ones(n)
    alphas: list[dict[str, float]] = []
    ess_rows: list[dict[str, float]] = []
    ne_total = np.zeros(n)
    in_total = np.zeros(n)

    for i in range(n):
        row = rows[i]
        ess: dict[str, float] = {}
        ess_sum = 0.0
        total = 0.0
        for code, val in row.items():
            total += val
            if spec.input_is_essential(i, code):
                ess[code] = val
                ess_sum += val
        in_total[i] = total
        ne_total[i] = total - ess_sum
        if total > 0:
            beta[i] = ess_sum / total
        if x0[i] > 0:
            alphas.append({code: val / x0[i] for code, val in ess.items()})
        else:
            alphas.append({})
        ess_rows.append(ess)

    for a in (x0, beta, ne_total, in_total):
        a.flags.writeable = False
    return ProductionParams(
        spec=spec,
        x0=x0,
        beta_tilde=beta,
        alpha=tuple(alphas),
        essential_inputs=tuple(ess_rows),
        non_essential_input=ne_total,
        input_total=in_total,
    )


def evaluate_gl(params: ProductionParams, firm: int, available: Mapping[str, float]) -> float:
    """Output of one firm given available input volumes per sector.

    Output is the minimum of the Leontief branch (scarcest essential input
    over its coefficient) and the linear branch (base level plus the summed
    non-essential inputs scaled by the overall input intensity). Evaluated at
    the observed inputs this reproduces the baseline output.
    """
    x0 = float(params.x0[firm])
    if x0 == 0:
        return 0.0

    ess_branch = np.inf
    for code, a in params.alpha[firm].items():
        ess_branch = min(ess_branch, float(available.get(code, 0.0)) / a)

    total = float(params.input_total[firm])
    if total == 0:
        lin_branch = x0
    else:
        ne_avail = 0.0
        for code, val in available.items():
            if not params.spec.input_is_essential(firm, code):
                ne_avail += float(val)
        lin_branch = params.beta_tilde[firm] * x0 + ne_avail * x0 / total

    return float(min(ess_branch, lin_branch))
