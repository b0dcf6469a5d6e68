"""Small dense strictly-convex QP:

    minimize   || u - u_des ||^2
    subject to a_i . u >= b_i,   i = 1..N

solved exactly by enumerating candidate active sets (N is the number of
obstacles, at most a handful).  Subsets are visited smallest-first and
in lexicographic order, so ties between equally optimal active sets
resolve deterministically.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

FEAS_TOL = 1e-8


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    active_set: tuple
    status: str  # "optimal" or "infeasible"

    @property
    def optimal(self):
        return self.status == "optimal"


def qp_solve(u_des, constraints):
    """Exact minimizer of ||u - u_des||^2 over the intersection of
    half-spaces a_i . u >= b_i.

    constraints: sequence of (a, b) pairs with a a 3-vector.
    """
    u_des = np.asarray(u_des, dtype=float)
    n = len(constraints)
    if n == 0:
        return QpSolution(u_des.copy(), (), "optimal")
    A = np.array([np.asarray(a, dtype=float) for a, _ in constraints])
    b = np.array([float(bi) for _, bi in constraints])

    slack = A @ u_des - b
    if np.all(slack >= -FEAS_TOL):
        return QpSolution(u_des.copy(), (), "optimal")

    dim = u_des.size
    for size in range(1, min(n, dim) + 1):
        for subset in combinations(range(n), size):
            idx = list(subset)
            As = A[idx]
            gram = As @ As.T
            rhs = b[idx] - As @ u_des
            try:
                lam = 2.0 * np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                continue  # dependent normals; a smaller subset covers this optimum
            if np.any(lam < -FEAS_TOL):
                continue  # dual infeasible: not the optimal active set
            u = u_des + 0.5 * As.T @ lam
            if np.all(A @ u - b >= -FEAS_TOL):
                return QpSolution(u, tuple(subset), "optimal")
    return QpSolution(u_des.copy(), (), "infeasible")


def least_violating_control(u_des, constraints, box=1e6):
    """Fallback for infeasible problems: among controls minimizing the
    maximum constraint violation, the one closest to u_des.

    Solves min_u max_i (b_i - a_i . u) as an LP, then re-solves the QP
    with every right-hand side relaxed by the optimal violation.
    """
    from scipy.optimize import linprog

    A = np.array([np.asarray(a, dtype=float) for a, _ in constraints])
    b = np.array([float(bi) for _, bi in constraints])
    dim = np.asarray(u_des).size
    # variables (u, v): minimize v s.t. -a_i.u - v <= -b_i
    c = np.zeros(dim + 1)
    c[-1] = 1.0
    A_ub = np.hstack([-A, -np.ones((len(b), 1))])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=-b,
        bounds=[(-box, box)] * dim + [(None, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"least-violation LP failed: {res.message}")
    v = max(res.x[-1], 0.0)
    relaxed = [(a, bi - v - FEAS_TOL) for (a, _), bi in zip(constraints, b)]
    sol = qp_solve(u_des, relaxed)
    return sol.u, v
