"""Independent reference computations used by the tests.

Everything here deliberately avoids the solver's Riccati recursion: the
constrained reference solution comes from a direct sparse KKT
factorization of the whole-horizon quadratic program, the unconstrained
value recursion is a plain textbook loop, and derivative checks use
central finite differences.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def central_difference_jacobian(fn, x, eps=1e-6):
    """Central-difference Jacobian of ``fn`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        step = eps * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        J[:, k] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2.0 * step)
    return J


def central_difference_gradient(fn, x, eps=1e-6):
    return central_difference_jacobian(lambda v: np.array([fn(v)]), x, eps)[0]


def rel_err(a, b, floor=1e-12):
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = max(float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / den


def solve_lq_qp(problem, x0, ts):
    """Whole-horizon equality-constrained QP by sparse KKT factorization.

    Direct transcription of the Euler-discretized problem: decision
    variables are all controls and all states after the first, equality
    rows are the dynamics and the per-step state-input constraints.  Valid
    for linear dynamics and constraints (time-varying allowed).  Returns
    the control trajectory, state trajectory and per-step constraint
    multipliers scaled to continuous-time units.
    """
    sys = problem.system
    cost = problem.cost
    n, nu = sys.state_dim, sys.control_dim
    N = len(ts) - 1
    dt = float(ts[1] - ts[0])
    m = sys.eq_constraint_dim(float(ts[0]))

    zeros_u = np.zeros(nu)
    A_list, B_list, c_list = [], [], []
    for i in range(N):
        t = float(ts[i])
        A, B = sys.linearize(np.zeros(n), zeros_u, t)
        Ad = np.eye(n) + A * dt
        Bd = B * dt
        drift = sys.dynamics(np.zeros(n), zeros_u, t) * dt
        A_list.append(Ad)
        B_list.append(Bd)
        c_list.append(drift)

    refs = cost.ref_batch(ts)

    # variable layout: [u_0 .. u_{N-1}, x_1 .. x_N]
    nv = N * nu + N * n

    def u_idx(i):
        return slice(i * nu, (i + 1) * nu)

    def x_idx(i):  # i from 1..N
        return slice(N * nu + (i - 1) * n, N * nu + i * n)

    H = sp.lil_matrix((nv, nv))
    q = np.zeros(nv)
    for i in range(N):
        H[u_idx(i), u_idx(i)] = 2.0 * cost.R * dt
    for i in range(1, N):
        H[x_idx(i), x_idx(i)] = 2.0 * cost.Q * dt
        q[x_idx(i)] = -2.0 * cost.Q @ refs[i] * dt
    H[x_idx(N), x_idx(N)] = 2.0 * cost.Qf
    q[x_idx(N)] = -2.0 * cost.Qf @ refs[N]

    rows = N * n + N * m
    Aeq = sp.lil_matrix((rows, nv))
    beq = np.zeros(rows)
    for i in range(N):
        r = slice(i * n, (i + 1) * n)
        Aeq[r, x_idx(i + 1)] = -np.eye(n)
        Aeq[r, u_idx(i)] = B_list[i]
        if i > 0:
            Aeq[r, x_idx(i)] = A_list[i]
            beq[r] = -c_list[i]
        else:
            beq[r] = -A_list[0] @ x0 - c_list[0]
    for i in range(N):
        t = float(ts[i])
        g0 = sys.eq_constraint(np.zeros(n), zeros_u, t)
        C, D = sys.eq_jacobians(np.zeros(n), zeros_u, t)
        r = slice(N * n + i * m, N * n + (i + 1) * m)
        Aeq[r, u_idx(i)] = D
        if i > 0:
            Aeq[r, x_idx(i)] = C
            beq[r] = -g0
        else:
            beq[r] = -g0 - C @ x0

    kkt = sp.bmat([[H.tocsc(), Aeq.T.tocsc()], [Aeq.tocsc(), None]], format="csc")
    rhs = np.concatenate([-q, beq])
    sol = spla.splu(kkt).solve(rhs)
    z = sol[:nv]
    lam = sol[nv:]
    us = z[: N * nu].reshape(N, nu)
    xs = np.vstack([x0, z[N * nu :].reshape(N, n)])
    nus = lam[N * n :].reshape(N, m) / dt if m else np.zeros((N, 0))
    return us, xs, nus


def discrete_value_recursion(Ad, Bd, Q2dt, R2dt, Sf):
    """Unconstrained discrete value recursion in gradient/Hessian form.

    ``Q2dt``/``R2dt`` are the second derivatives of the discrete stage
    cost, ``Sf`` the terminal value Hessian.  Returns value Hessians per
    knot.
    """
    N = len(Bd)
    S = Sf.copy()
    out = [S]
    for i in range(N - 1, -1, -1):
        Quu = R2dt + Bd[i].T @ S @ Bd[i]
        Qux = Bd[i].T @ S @ Ad[i]
        Qxx = Q2dt + Ad[i].T @ S @ Ad[i]
        K = -np.linalg.solve(Quu, Qux)
        S = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        S = 0.5 * (S + S.T)
        out.append(S)
    return out[::-1]
