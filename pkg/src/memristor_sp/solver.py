"""Nodal analysis and time integration of memristor circuits.

The start node is held at the control voltage by an ideal source and the
end node is grounded. Interior node potentials follow from Kirchhoff's
current law: a reduced weighted-Laplacian solve for the linear device law,
damped Newton-Raphson for the Chang law. Device states are advanced by
explicit Euler with step halving.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dpbtrf, dpbtrs
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import NewtonNoConvergence, SingularSystem, StepCollapse
from .graph import Graph
from .models import DeviceModel

RESIDUAL_FLOOR = 1e-15  # A, keeps the relative residual finite at zero bias
MAX_HALVINGS = 6
ROUNDOFF_STEP = 1e-13  # relative to the control voltage


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    dx_max: float = 0.05
    newton_tol: float = 1e-12
    newton_rel_tol: float = 1e-11
    newton_max_iter: int = 50
    sample_dt: float = 1e-2

    def __post_init__(self):
        if min(self.dt, self.dx_max, self.newton_tol, self.sample_dt) <= 0:
            raise ValueError("solver settings must be positive")
        if self.dx_max >= 1:
            raise ValueError("dx_max must be < 1")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")

    @classmethod
    def for_model(cls, kind: str, **overrides) -> "SolverConfig":
        base = dict(dt=1e-3, sample_dt=1e-2) if kind == "linear" else dict(dt=1e-2, sample_dt=1e-1)
        base.update(overrides)
        return cls(**base)


@dataclass
class Solution:
    """Operating point of the circuit for one (x, v_ctrl)."""

    potentials: np.ndarray
    branch_v: np.ndarray
    branch_i: np.ndarray
    i_total: float
    newton_iters: int = 0


@dataclass
class CircuitState:
    x: np.ndarray
    t: float
    v_ctrl: float
    energy: float
    op: Solution

    @property
    def node_potentials(self) -> np.ndarray:
        return self.op.potentials.astype(np.float64)

    @property
    def i_total(self) -> float:
        return self.op.i_total


@dataclass
class CurrentTrace:
    t: list = field(default_factory=list)
    v_ctrl: list = field(default_factory=list)
    i_total: list = field(default_factory=list)
    max_residual: float = 0.0

    def append(self, t, v, i):
        self.t.append(t)
        self.v_ctrl.append(v)
        self.i_total.append(i)

    def __len__(self):
        return len(self.t)

    def to_csv(self, destination) -> None:
        with open(destination, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "v_ctrl_V", "i_total_A"])
            for row in zip(self.t, self.v_ctrl, self.i_total):
                w.writerow([repr(float(val)) for val in row])


class Circuit:
    """Index structures for one graph bound to one device model.

    Everything that does not change between time steps (edge endpoints,
    sparsity pattern of the reduced nodal matrix) is precomputed here.
    """

    def __init__(self, graph: Graph, model: DeviceModel):
        self.graph = graph
        self.model = model
        self.nodes = list(graph.node_ids)
        pos = {n: k for k, n in enumerate(self.nodes)}
        self.pos = pos
        edges = sorted(graph.edges, key=lambda e: e.edge_id)
        self.edge_ids = np.array([e.edge_id for e in edges])
        self.eu = np.array([pos[e.u] for e in edges], dtype=np.intp)
        self.ev = np.array([pos[e.v] for e in edges], dtype=np.intp)
        self.n_nodes = len(self.nodes)
        self.n_edges = len(edges)
        self.s = pos[graph.start]
        self.e = pos[graph.end]

        # Blocks hanging off a single node carry no current; they copy the
        # potential of their attachment node so their currents are exactly 0.
        live, self.anchor = _live_nodes(graph, pos)
        self.live_edge = live[self.eu] & live[self.ev]
        interior = [k for k in range(self.n_nodes)
                    if live[k] and k not in (self.s, self.e)]
        self.interior = np.array(interior, dtype=np.intp)
        red = -np.ones(self.n_nodes, dtype=np.intp)
        red[self.interior] = np.arange(len(interior))
        self.n_red = len(interior)
        ru, rv = red[self.eu], red[self.ev]
        ru = np.where(self.live_edge, ru, -1)
        rv = np.where(self.live_edge, rv, -1)

        # Node-edge incidence (+1 at u, -1 at v): net current leaving each node.
        cols = np.arange(self.n_edges)
        self.incidence = sp.csr_matrix(
            (np.r_[np.ones(self.n_edges), -np.ones(self.n_edges)],
             (np.r_[self.eu, self.ev], np.r_[cols, cols])),
            shape=(self.n_nodes, self.n_edges))
        self.abs_incidence = abs(self.incidence)
        self.red_incidence = self.incidence[self.interior]
        self.abs_red_incidence = abs(self.red_incidence)

        # Reduced nodal matrix pattern: entries are +-g of single edges.
        rows, cols_, eidx, sign = [], [], [], []
        for k in range(self.n_edges):
            if not self.live_edge[k]:
                continue
            a, b = ru[k], rv[k]
            if a >= 0:
                rows.append(a); cols_.append(a); eidx.append(k); sign.append(1.0)
            if b >= 0:
                rows.append(b); cols_.append(b); eidx.append(k); sign.append(1.0)
            if a >= 0 and b >= 0:
                rows += [a, b]; cols_ += [b, a]; eidx += [k, k]; sign += [-1.0, -1.0]
        rows, cols_ = np.array(rows, dtype=np.intp), np.array(cols_, dtype=np.intp)
        self._eidx = np.array(eidx, dtype=np.intp)
        self._sign = np.array(sign)
        key = cols_ * max(self.n_red, 1) + rows
        uniq, self._slot = np.unique(key, return_inverse=True)
        self._nnz = len(uniq)
        ucol, urow = np.divmod(uniq, max(self.n_red, 1))
        self._indices = urow.astype(np.int32)
        self._indptr = np.searchsorted(ucol, np.arange(self.n_red + 1)).astype(np.int32)
        # The pattern never changes, so the bandwidth-reducing ordering is
        # computed once and every step runs a banded Cholesky factorisation.
        pattern = sp.csr_matrix((np.ones(self._nnz), (urow, ucol)),
                                shape=(self.n_red, self.n_red))
        if self.n_red:
            self._perm = reverse_cuthill_mckee(pattern, symmetric_mode=True).astype(np.intp)
        else:
            self._perm = np.zeros(0, dtype=np.intp)
        inv = np.empty(self.n_red, dtype=np.intp)
        inv[self._perm] = np.arange(self.n_red)
        pi, pj = inv[urow], inv[ucol]
        upper = pi <= pj
        self._band = int(np.max(pj - pi)) if self._nnz else 0
        self._band_slots = np.flatnonzero(upper)
        self._band_pos = (self._band + pi[upper] - pj[upper]) * self.n_red + pj[upper]

        # Edges tying an interior node to the start node feed the RHS.
        src = []
        for k in range(self.n_edges):
            if self.eu[k] == self.s and ru[k] < 0 and rv[k] >= 0:
                src.append((rv[k], k))
            elif self.ev[k] == self.s and rv[k] < 0 and ru[k] >= 0:
                src.append((ru[k], k))
        self._src_rows = np.array([r for r, _ in src], dtype=np.intp)
        self._src_edges = np.array([k for _, k in src], dtype=np.intp)
        self._start_sign = np.zeros(self.n_edges)
        self._start_sign[self.eu == self.s] = 1.0
        self._start_sign[self.ev == self.s] = -1.0

    # ---------------------------------------------------------------- assembly

    def nodal_matrix(self, g: np.ndarray) -> sp.csc_matrix:
        """Reduced weighted Laplacian A_r diag(g) A_r^T over interior nodes."""
        data = np.bincount(self._slot, weights=self._sign * g[self._eidx],
                           minlength=self._nnz)
        return sp.csc_matrix((data, self._indices, self._indptr),
                             shape=(self.n_red, self.n_red))

    def _factor(self, g):
        """Factorise the nodal matrix; returns a solve(rhs) callable."""
        data = np.bincount(self._slot, weights=self._sign * g[self._eidx],
                           minlength=self._nnz)
        n, perm = self.n_red, self._perm
        ab = np.zeros((self._band + 1) * n)
        ab[self._band_pos] = data[self._band_slots]
        c, info = dpbtrf(ab.reshape(self._band + 1, n), lower=0, overwrite_ab=1)
        if info != 0:
            raise SingularSystem(f"nodal matrix not positive definite (info={info})")

        def solve(rhs):
            out = np.empty(n)
            out[perm] = dpbtrs(c, rhs[perm])[0]
            return out
        return solve

    def _factor_solve(self, g, rhs):
        if self.n_red == 0:
            return np.zeros(0)
        return self._factor(g)(rhs)

    def _branch_v(self, phi):
        return (phi[self.eu] - phi[self.ev]).astype(np.float64)

    def _full_potentials(self, red_phi, v_ctrl):
        phi = np.empty(self.n_nodes, dtype=np.longdouble)
        phi[self.interior] = red_phi
        phi[self.s] = v_ctrl
        phi[self.e] = 0.0
        phi[:] = phi[self.anchor]
        return phi

    def _operating_point(self, x, phi, iters=0):
        bv = self._branch_v(phi)
        bi = self.model.current(x, bv)
        return Solution(phi, bv, bi, float(self._start_sign @ bi), iters)

    # ---------------------------------------------------------------- solves

    def solve(self, x, v_ctrl: float, guess: Optional[np.ndarray] = None,
              cfg: Optional[SolverConfig] = None) -> Solution:
        """Node potentials, branch voltages/currents and source current."""
        if self.model.is_linear:
            return self._solve_linear(x, v_ctrl)
        return self._solve_newton(x, v_ctrl, guess, cfg or SolverConfig())

    def _solve_linear(self, x, v_ctrl):
        g = self.model.conductance(x)
        phi = self._solve_linear_with(g, v_ctrl)
        return self._operating_point(x, phi)

    def _solve_newton(self, x, v_ctrl, guess, cfg):
        if guess is None:
            # Linearised (small-signal) solution is a good starting point.
            guess = self._solve_linear_with(self.model.conductance(x), v_ctrl)
        phi = np.array(guess, dtype=np.longdouble)
        phi[self.s] = v_ctrl
        phi[self.e] = 0.0
        phi[:] = phi[self.anchor]
        model = self.model

        def residual(p):
            bv = self._branch_v(p)
            bi = model.current(x, bv)
            f = self.red_incidence @ bi
            scale = self.abs_red_incidence @ np.abs(bi)
            return bv, bi, f, scale

        bv, bi, f, scale = residual(phi)
        norm = np.linalg.norm(f)
        for it in range(cfg.newton_max_iter + 1):
            if np.all(np.abs(f) <= cfg.newton_tol) and \
                    np.all(np.abs(f) <= cfg.newton_rel_tol * (scale + RESIDUAL_FLOOR)):
                return Solution(phi, bv, bi, float(self._start_sign @ bi), it)
            if it == cfg.newton_max_iter:
                break
            jac_g = model.didv(x, bv)
            delta = self._factor_solve(jac_g, f)
            # Update at the rounding level of the potentials: nothing left to gain.
            at_floor = np.max(np.abs(delta)) <= ROUNDOFF_STEP * max(abs(v_ctrl), 1e-300)
            lam = 1.0
            for _ in range(30):
                trial = phi.copy()
                trial[self.interior] -= lam * delta
                trial[:] = trial[self.anchor]
                tbv, tbi, tf, tscale = residual(trial)
                tnorm = np.linalg.norm(tf)
                if tnorm < norm or not np.isfinite(norm):
                    break
                lam *= 0.5
            else:
                if at_floor:
                    return Solution(phi, bv, bi, float(self._start_sign @ bi), it)
                break
            phi, bv, bi, f, scale, norm = trial, tbv, tbi, tf, tscale, tnorm
            if at_floor:
                return Solution(phi, bv, bi, float(self._start_sign @ bi), it + 1)
        raise NewtonNoConvergence(
            f"residual {np.max(np.abs(f)):.3e} A after {cfg.newton_max_iter} iterations")

    def _solve_linear_with(self, g, v_ctrl):
        """Ohmic solve plus one round of iterative refinement.

        Potentials are held in extended precision: near-equipotential nodes
        differ by far less than one float64 ulp of the source voltage, and
        their branch currents would otherwise be rounding noise.
        """
        if self.n_red == 0:
            return self._full_potentials(np.zeros(0), v_ctrl)
        lu = self._factor(g)
        rhs = np.bincount(self._src_rows, weights=g[self._src_edges] * v_ctrl,
                          minlength=self.n_red)
        phi = self._full_potentials(lu(rhs), v_ctrl)
        net = self.red_incidence @ (g * self._branch_v(phi))
        phi[self.interior] -= lu(net)
        phi[:] = phi[self.anchor]
        return phi

    def jacobian(self, x, potentials) -> sp.csc_matrix:
        """Analytic d(net interior current)/d(interior potential)."""
        bv = self._branch_v(potentials)
        return self.nodal_matrix(self.model.didv(x, bv))

    def net_interior_current(self, x, potentials) -> np.ndarray:
        bv = self._branch_v(potentials)
        return self.red_incidence @ self.model.current(x, bv)

    def kirchhoff_residual(self, op: Solution) -> float:
        """Worst interior-node |net current| relative to incident current magnitude."""
        if self.n_red == 0:
            return 0.0
        net = self.red_incidence @ op.branch_i
        scale = self.abs_red_incidence @ np.abs(op.branch_i)
        return float(np.max(np.abs(net) / (scale + RESIDUAL_FLOOR)))

    def terminal_currents(self, op: Solution):
        """(current leaving start into the network, current arriving at end)."""
        net = self.incidence @ op.branch_i
        return float(net[self.s]), float(-net[self.e])

    # ---------------------------------------------------------------- dynamics

    def rates(self, x, op: Solution) -> np.ndarray:
        """dx/dt with the [0, 1] clamp folded in (zero when pushing outward)."""
        r = self.model.dxdt(x, op.branch_v, op.branch_i)
        return np.where(((x >= 1.0) & (r > 0)) | ((x <= 0.0) & (r < 0)), 0.0, r)

    def initial_state(self, v_ctrl: float = 0.0, x0=None,
                      cfg: Optional[SolverConfig] = None) -> CircuitState:
        x = np.zeros(self.n_edges) if x0 is None else np.array(x0, dtype=float)
        return CircuitState(x, 0.0, float(v_ctrl), 0.0, self.solve(x, v_ctrl, cfg=cfg))

    def x_by_edge_id(self, x) -> dict:
        return {int(eid): float(val) for eid, val in zip(self.edge_ids, x)}


def _live_nodes(graph: Graph, pos: dict):
    """Mark nodes lying on some simple start-end path.

    Those are the nodes of the biconnected component holding a virtual
    start-end edge. Every other node hangs off exactly one live node, its
    anchor, through which it is reached.
    """
    g = nx.Graph()
    g.add_nodes_from(graph.node_ids)
    g.add_edges_from((e.u, e.v) for e in graph.edges)
    g.add_edge(graph.start, graph.end)
    live = np.zeros(len(pos), dtype=bool)
    for comp in nx.biconnected_components(g):
        if graph.start in comp and graph.end in comp:
            live[[pos[n] for n in comp]] = True
            break
    anchor = np.arange(len(pos))
    queue = deque(k for k in range(len(pos)) if live[k])
    seen = live.copy()
    adj = graph.adjacency
    while queue:
        k = queue.popleft()
        for _, nb in adj[graph.node_ids[k]]:
            j = pos[nb]
            if not seen[j]:
                seen[j] = True
                anchor[j] = anchor[k]
                queue.append(j)
    return live, anchor


VoltageFn = Union[float, Callable[[float], float]]


def _as_fn(v_ctrl: VoltageFn) -> Callable[[float], float]:
    if callable(v_ctrl):
        return v_ctrl
    value = float(v_ctrl)
    return lambda t: value


def step(state: CircuitState, circuit: Circuit, v_ctrl: VoltageFn,
         cfg: SolverConfig, max_dt: Optional[float] = None) -> CircuitState:
    """Advance every device by one explicit Euler step.

    The step starts at ``cfg.dt`` (or ``max_dt`` if smaller) and is halved
    up to six times while any device would move by more than ``dx_max`` or
    the Newton solve fails.

    Raises:
        StepCollapse: no admissible step down to dt/64.
    """
    v_fn = _as_fn(v_ctrl)
    rate = circuit.rates(state.x, state.op)
    h = cfg.dt if max_dt is None else min(cfg.dt, max_dt)
    peak = float(np.max(np.abs(rate))) if rate.size else 0.0
    last_err = None
    for _ in range(MAX_HALVINGS + 1):
        if peak * h <= cfg.dx_max:
            x_new = np.clip(state.x + h * rate, 0.0, 1.0)
            v_new = v_fn(state.t + h)
            try:
                op = circuit.solve(x_new, v_new, guess=state.op.potentials, cfg=cfg)
            except NewtonNoConvergence as exc:
                last_err = exc
                h *= 0.5
                continue
            energy = state.energy + 0.5 * h * (state.v_ctrl * state.op.i_total + v_new * op.i_total)
            return CircuitState(x_new, state.t + h, v_new, energy, op)
        h *= 0.5
    raise StepCollapse(f"no admissible step at t={state.t:.6g} s "
                       f"(max rate {peak:.3g}/s){'; ' + str(last_err) if last_err else ''}")


@dataclass
class RunOutcome:
    state: CircuitState
    trace: CurrentTrace
    stopped: bool  # stop_fn fired
    timed_out: bool


def run_until(state: CircuitState, circuit: Circuit, v_ctrl: VoltageFn,
              stop_fn: Callable[[CircuitState, CurrentTrace], bool],
              cfg: SolverConfig, t_max: float,
              check_residual: bool = True) -> RunOutcome:
    """Step until ``stop_fn`` fires at a sample instant or ``t_max`` passes.

    Samples (t, v_ctrl, i_total) are taken every ``cfg.sample_dt``; steps are
    shortened so that every sample lands exactly on the sampling grid.
    ``stop_fn`` sees the state and trace after each sample, including the
    initial one.
    """
    trace = CurrentTrace()
    t0 = state.t
    k = 0

    def sample(st):
        trace.append(st.t, st.v_ctrl, st.i_total)
        if check_residual:
            trace.max_residual = max(trace.max_residual, circuit.kirchhoff_residual(st.op))

    sample(state)
    if stop_fn(state, trace):
        return RunOutcome(state, trace, True, False)
    while True:
        k += 1
        t_next = t0 + k * cfg.sample_dt
        if t_next > t_max + 1e-9 * cfg.sample_dt:
            return RunOutcome(state, trace, False, True)
        while t_next - state.t > 1e-9 * cfg.sample_dt:
            state = step(state, circuit, v_ctrl, cfg, max_dt=t_next - state.t)
        state = replace(state, t=t_next)
        sample(state)
        if stop_fn(state, trace):
            return RunOutcome(state, trace, True, False)
