"""Distributed detection of compromised absolute-position sensors.

Each vehicle refines three sensor sets every step from purely local data:
a gap test cross-checks consecutive absolute sensors through the secured
relative reading between them, an innovation test compares the own sensor
against the model prediction and the current error bound, and two counting
rules convert accumulated suspicion into certainty once the attack budget
``b`` is exhausted.  All rules are conservative by construction: with
bounded noise they never implicate an attack-free sensor, so the sets only
ever move toward the truth (attacked sensors into ``attacked``, cleared
ones into ``trusted``).
"""

import math
from dataclasses import dataclass

from .core import DetectionSets, InconsistentSetsError

#: absolute slack subtracted from every test statistic so accumulated
#: floating-point rounding can never fire a rule on attack-free data
SLACK = 1e-12


def pairwise_check(y_rel, y_abs_front, y_abs_own,
                   mu: float, slack: float = SLACK) -> bool:
    """Gap test between sensors ``i-1`` and ``i``.

    The relative reading plus the front absolute reading must reproduce the
    own absolute reading up to three noise radii; anything larger proves at
    least one of the two absolute sensors is lying.
    """
    r0 = y_rel[0] + y_abs_front[0] - y_abs_own[0]
    r1 = y_rel[1] + y_abs_front[1] - y_abs_own[1]
    return math.hypot(r0, r1) - slack > 3.0 * mu


def innovation_check(y_abs_own, x_bar_own, bound_prev: float,
                     eps: float, mu: float, norm_A: float,
                     slack: float = SLACK) -> bool:
    """Self test of the own absolute sensor against the model prediction.

    An attack-free reading can differ from the prediction by at most the
    propagated error bound plus process and measurement noise; beyond that
    the own sensor must be compromised.
    """
    r0 = y_abs_own[0] - x_bar_own[0]
    r1 = y_abs_own[1] - x_bar_own[1]
    return math.hypot(r0, r1) - slack > eps + mu + norm_A * bound_prev


def split_suspicious(indices) -> list:
    """Maximal runs of consecutive indices, ascending."""
    runs = []
    cur = []
    for v in sorted(indices):
        if cur and v == cur[-1] + 1:
            cur.append(v)
        else:
            if cur:
                runs.append(tuple(cur))
            cur = [v]
    if cur:
        runs.append(tuple(cur))
    return runs


def min_attacked_count(indices) -> int:
    """Least number of attacked sensors that could explain the suspicion.

    The gap test implicates pairs, so a single attacked sensor can drag at
    most its two neighbours into suspicion: every run of ``r`` consecutive
    suspects needs at least ``ceil(r/3)`` true attacks.
    """
    count = 0
    run_len = 0
    prev = 0
    for v in sorted(indices):
        if run_len and v == prev + 1:
            run_len += 1
        else:
            count += (run_len + 2) // 3
            run_len = 1
        prev = v
    return count + (run_len + 2) // 3


def saturation_check(indices, b: int) -> bool:
    """True when the suspicion pattern already requires all ``b`` attacks."""
    return min_attacked_count(indices) == b


@dataclass(frozen=True, slots=True)
class DetectorStepResult:
    sets: DetectionSets
    pairwise: bool
    innovation: bool
    exhaustion: bool
    completion: bool


def detector_step(i: int, fused: DetectionSets, y_rel_own, y_abs_front, y_abs_own,
                  x_bar_own, bound_prev: float, n_vehicles: int, b: int,
                  mu: float, eps: float, norm_A: float) -> DetectorStepResult:
    """One detection update for vehicle ``i`` (fusion already applied).

    Applies, in order: the gap test on the pair ``(i-1, i)``, the innovation
    self test, the budget-exhaustion rule (suspicion alone already pins down
    ``b`` attacks, so everyone unsuspected is clean), and the completion
    rule (all ``b`` attacks confirmed, so everyone else is clean).

    When neither measurement test fires and the counting rules cannot move
    any sensor, the fused sets are returned as-is (same object); only the
    rule flags are recomputed.  Detection therefore costs almost nothing in
    the long stretches before the first alarm and after the last one.
    """
    trusted_f = fused.trusted
    attacked_f = fused.attacked
    suspected_f = fused.suspected

    fired_pair = (i >= 2 and i not in attacked_f and (i - 1) not in attacked_f
                  and pairwise_check(y_rel_own, y_abs_front, y_abs_own, mu))
    if not fired_pair:
        fired_inno = (i not in attacked_f and i not in trusted_f
                      and innovation_check(y_abs_own, x_bar_own, bound_prev,
                                           eps, mu, norm_A))
        if not fired_inno:
            union = (attacked_f | suspected_f) if suspected_f else attacked_f
            m = len(union)
            if m <= 1:  # zero or one suspicious sensor needs exactly m attacks
                fired_exh = m == b
            else:
                fired_exh = min_attacked_count(union) == b
            fired_comp = len(attacked_f) == b
            if len(attacked_f) <= b and not (
                    suspected_f and trusted_f and (suspected_f & trusted_f)):
                # trusted is disjoint from the others, so size checks suffice
                # to see whether either counting rule would grow it
                exh_static = (not fired_exh
                              or len(trusted_f) == n_vehicles - len(union))
                comp_static = (not fired_comp
                               or len(trusted_f) == n_vehicles - len(attacked_f))
                if exh_static and comp_static:
                    return DetectorStepResult(fused, False, False,
                                              fired_exh, fired_comp)

    trusted = set(trusted_f)
    attacked = set(attacked_f)
    suspected = set(suspected_f)
    fired_inno = fired_exh = fired_comp = False

    if fired_pair:
        if i in trusted:
            attacked.add(i - 1)
        elif (i - 1) in trusted:
            attacked.add(i)
        else:
            suspected.add(i - 1)
            suspected.add(i)

    if i not in attacked and i not in trusted:
        if innovation_check(y_abs_own, x_bar_own, bound_prev, eps, mu, norm_A):
            fired_inno = True
            attacked.add(i)

    everyone = range(1, n_vehicles + 1)
    if saturation_check(suspected | attacked, b):
        fired_exh = True
        trusted.update(v for v in everyone if v not in suspected and v not in attacked)

    if len(attacked) == b:
        fired_comp = True
        trusted = {v for v in everyone if v not in attacked}

    if len(attacked) > b:
        raise InconsistentSetsError(
            f"vehicle {i} confirmed {len(attacked)} attacked sensors, more than the "
            f"budget b={b}; a modelling assumption is violated")

    sets = DetectionSets(frozenset(trusted), frozenset(attacked),
                         frozenset(suspected - attacked - trusted))
    return DetectorStepResult(sets=sets, pairwise=fired_pair, innovation=fired_inno,
                              exhaustion=fired_exh, completion=fired_comp)
