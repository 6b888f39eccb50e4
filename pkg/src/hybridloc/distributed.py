"""Per-node FISTA over a simulated synchronous message-passing network.

Every node owns its window positions ``x_i``, one ``y`` vector per incident
node-node edge, one ``w`` per anchor edge and its own velocity variables
``s_i``. A round is: extrapolate the own block, broadcast the extrapolated
positions to neighbors, wait for the barrier, then update from the inbox.

``y`` vectors are computed by both endpoints of an edge. The inputs are the
same (own and neighbor positions, shared measurement) so the two copies agree
bit for bit; the first endpoint ``i < j`` reports it for stopping and output.
The step size ``L`` is a shared scalar handed to every node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from .errors import DivergenceError, ProtocolError
from ._kernels import node_aux, node_position
from .problem import ConstraintSet, QuadraticForm, ball_project
from .solver import SolverConfig, form_lipschitz, momentum_coefficient


@dataclass
class RoundMessage:
    sender: int
    round: int
    positions: np.ndarray  # (T, p) extrapolated window positions

    @property
    def size(self) -> int:
        return int(self.positions.size)


class Inbox:
    """Round-``k`` messages for one node, with an access audit.

    Reading from a non-neighbor or a sender whose message did not arrive
    raises :class:`ProtocolError`. Every read is recorded in ``accesses``.
    """

    def __init__(self, owner: int, neighbors: Sequence[int], round: int):
        self.owner = owner
        self.neighbors = frozenset(int(j) for j in neighbors)
        self.round = round
        self._messages: dict[int, RoundMessage] = {}
        self.accesses: list[tuple[int, int]] = []

    def deliver(self, msg: RoundMessage) -> None:
        if msg.sender not in self.neighbors:
            raise ProtocolError(f"node {msg.sender} is not a neighbor of node {self.owner}",
                                sender=msg.sender, round=msg.round)
        if msg.round != self.round:
            raise ProtocolError(f"message from node {msg.sender} for round {msg.round} arrived in round {self.round}",
                                sender=msg.sender, round=msg.round)
        self._messages[msg.sender] = msg

    def get(self, sender: int) -> np.ndarray:
        self.accesses.append((self.owner, sender))
        if sender not in self.neighbors:
            raise ProtocolError(f"node {self.owner} read from non-neighbor {sender} in round {self.round}",
                                sender=sender, round=self.round)
        try:
            return self._messages[sender].positions
        except KeyError:
            raise ProtocolError(f"missing message from node {sender} in round {self.round}",
                                sender=sender, round=self.round) from None


@dataclass
class NodeState:
    """Everything node ``i`` knows: its own variables, measurements and weights.

    Edge arrays are indexed by the node's incident edges in ``edge_ids`` order;
    ``sign`` is +1 where the node is the first endpoint (``y = x_i - x_j``).
    """

    node: int
    L: float
    x: np.ndarray            # (T, p)
    aux: np.ndarray          # (T*deg + T*k_i + T-1, p): y, then w, then s
    edge_ids: np.ndarray     # (deg,) global edge index, used for output only
    neighbors: np.ndarray    # (deg,)
    sign: np.ndarray         # (deg,)
    wn: np.ndarray           # (deg,) 1/sigma_ij^2
    u_tilde: np.ndarray      # (T, deg, p)
    y_radius: np.ndarray     # (T, deg)
    anchor_ids: np.ndarray   # (k_i,) global anchor-edge index
    wa: np.ndarray           # (k_i,) 1/varsigma_ik^2
    alpha: np.ndarray        # (T, k_i, p) anchor positions
    q_tilde: np.ndarray      # (T, k_i, p)
    w_radius: np.ndarray     # (T, k_i)
    wv: float                # 1/sigma_i^2
    v_tilde: np.ndarray      # (T-1, p)
    s_radius: np.ndarray     # (T-1,)
    prev: tuple = field(default=None, repr=False)  # previous (x, aux) for momentum

    def __post_init__(self):
        T, deg, k = self.window, len(self.neighbors), len(self.anchor_ids)
        self._cuts = (T * deg, T * deg + T * k)
        self._shapes = ((T, deg), (T, k))
        self.radius = np.concatenate([self.y_radius.ravel(), self.w_radius.ravel(), self.s_radius.ravel()])
        # rows this node reports for stopping: own-side y, all w and s
        rep = np.ones(len(self.radius))
        rep[: T * deg] = np.tile(self.sign > 0, T)
        self.report = rep

    @property
    def window(self) -> int:
        return self.x.shape[0]

    def split_aux(self, aux: np.ndarray):
        """Views ``(y, w, s)`` of a flat auxiliary array."""
        a, b = self._cuts
        p = aux.shape[-1]
        return (aux[:a].reshape(self._shapes[0] + (p,)), aux[a:b].reshape(self._shapes[1] + (p,)), aux[b:])

    @property
    def y(self):
        return self.split_aux(self.aux)[0]

    @property
    def w(self):
        return self.split_aux(self.aux)[1]

    @property
    def s(self):
        return self.split_aux(self.aux)[2]

    def block(self):
        return (self.x,) + self.split_aux(self.aux)

    def project_inplace(self) -> None:
        self.aux = ball_project(self.aux, self.radius)


def local_extrapolate(state: NodeState, k: int, rule: str = "fista"):
    """Extrapolated own block ``(x_hat, aux_hat)`` with ``c_k`` from ``rule``."""
    c = momentum_coefficient(k, rule)
    x_prev, aux_prev = state.prev if state.prev is not None else (state.x, state.aux)
    return state.x + c * (state.x - x_prev), state.aux + c * (state.aux - aux_prev)


def neighbor_positions(state: NodeState, inbox: Inbox) -> np.ndarray:
    """Round-``k`` neighbor payloads stacked as ``(T, deg, p)``."""
    if len(state.neighbors) == 0:
        return np.zeros((state.window, 0, state.x.shape[1]))
    return np.stack([inbox.get(int(j)) for j in state.neighbors], axis=1)


def update_position(state: NodeState, zhat, nbr: np.ndarray) -> np.ndarray:
    """New window positions ``(F1 + F2 + F3 + F4) / L``.

    ``F1 = x_hat (L - sum_j 1/sigma_ij^2 - sum_k 1/varsigma_ik^2)``,
    ``F2 = sum_j (x_hat_j + c_ij y_hat_ij) / sigma_ij^2``,
    ``F3 = sum_k (w_hat_ik + a_k) / varsigma_ik^2`` and ``F4`` the node's
    own velocity chain. ``nbr`` holds the neighbors' extrapolated positions,
    see :func:`neighbor_positions`.
    """
    xh, auxh = zhat
    return node_position(xh, auxh, nbr, state.sign, state.wn, state.wa, state.alpha, state.wv, state.L)


def _edge_step(state: NodeState, zhat, nbr: np.ndarray) -> np.ndarray:
    xh, auxh = zhat
    return node_aux(xh, auxh, nbr, state.sign, state.wn, state.u_tilde, state.wa, state.alpha,
                    state.q_tilde, state.wv, state.v_tilde, state.radius, state.L)


def update_edge_vars(state: NodeState, zhat, nbr: np.ndarray):
    """Projected updates ``(y, w, s)`` of the node's auxiliary vectors.

    Each is a gradient step from the extrapolated value followed by the
    projection onto its ball; ``s`` exists only for window slots ``tau >= 1``.
    """
    return state.split_aux(_edge_step(state, zhat, nbr))


def build_nodes(form: QuadraticForm, cons: ConstraintSet, z0: Optional[np.ndarray] = None,
                L: Optional[float] = None) -> list[NodeState]:
    """Slice a centralized window problem into per-node states."""
    lay, wt = form.layout, form.weights
    if form.alpha is None:
        raise ValueError("the quadratic form carries no per-edge data; build it with assemble()")
    L = form_lipschitz(form) if L is None else float(L)
    z0 = lay.zeros() if z0 is None else np.asarray(z0, dtype=float)
    x0, y0, w0, s0 = lay.split(z0)
    edges = np.asarray(form.edges, dtype=int).reshape(-1, 2)
    aedges = np.asarray(form.anchor_edges, dtype=int).reshape(-1, 2)
    nodes = []
    for i in range(lay.n_nodes):
        first = np.flatnonzero(edges[:, 0] == i)
        second = np.flatnonzero(edges[:, 1] == i)
        eids = np.concatenate([first, second])
        nbrs = np.concatenate([edges[first, 1], edges[second, 0]])
        sign = np.concatenate([np.ones(len(first)), -np.ones(len(second))])
        aids = np.flatnonzero(aedges[:, 0] == i)
        st = NodeState(
            node=i, L=L,
            x=x0[:, i].copy(),
            aux=np.concatenate([y0[:, eids].reshape(-1, lay.dim), w0[:, aids].reshape(-1, lay.dim), s0[:, i]]),
            edge_ids=eids, neighbors=nbrs, sign=sign, wn=wt.node[eids].copy(),
            u_tilde=form.u_tilde[:, eids].copy(), y_radius=cons.y[:, eids].copy(),
            anchor_ids=aids, wa=wt.anchor[aids].copy(), alpha=form.alpha[:, aids].copy(),
            q_tilde=form.q_tilde[:, aids].copy(), w_radius=cons.w[:, aids].copy(),
            wv=float(wt.vel[i]), v_tilde=form.v_tilde[:, i].copy(), s_radius=cons.s[:, i].copy(),
        )
        st.project_inplace()
        nodes.append(st)
    return nodes


def gather(nodes: Sequence[NodeState], form: QuadraticForm) -> np.ndarray:
    """Global ``z`` from node states; each ``y`` is taken from its first endpoint."""
    lay = form.layout
    z = lay.zeros()
    x, y, w, s = lay.split(z)
    for st in nodes:
        sy, sw, ss = st.split_aux(st.aux)
        x[:, st.node] = st.x
        own = st.sign > 0
        y[:, st.edge_ids[own]] = sy[:, own]
        w[:, st.anchor_ids] = sw
        s[:, st.node] = ss
    return z


def _step_and_norm(st: NodeState, old) -> tuple[float, float]:
    """Squared step and squared norm of the variables this node reports."""
    dx = st.x - old[0]
    da = st.aux - old[1]
    step = float(np.vdot(dx, dx)) + float(np.einsum("ij,ij,i->", da, da, st.report))
    norm = float(np.vdot(st.x, st.x)) + float(np.einsum("ij,ij,i->", st.aux, st.aux, st.report))
    return step, norm


@dataclass
class DistributedResult:
    z: np.ndarray
    iterations: int
    converged: bool
    messages: int
    L: float
    log: list = field(default_factory=list)        # (round, sender, receiver, payload size)
    iterates: list = field(default_factory=list)   # global z per iteration when requested
    accesses: list = field(default_factory=list)   # (reader, sender) pairs when audited

    def write_message_log(self, fh: TextIO) -> None:
        fh.write("round,sender,receiver,payload_size\n")
        for rec in self.log:
            fh.write(",".join(str(v) for v in rec) + "\n")


def run_window(
    form: QuadraticForm,
    cons: ConstraintSet,
    config: Optional[SolverConfig] = None,
    z0: Optional[np.ndarray] = None,
    L: Optional[float] = None,
    log_messages: bool = False,
    audit: bool = False,
    order: Optional[Sequence[int]] = None,
    drop: Optional[tuple[int, int, int]] = None,
) -> DistributedResult:
    """Solve one window with synchronous per-node rounds.

    Stops on the same rule as the centralized solver: the harness sums the
    squared step and iterate norms reported by the nodes and tests
    ``||dz|| / max(1, ||z||) < tol``. ``order`` permutes the per-round update
    order; ``drop=(round, sender, receiver)`` suppresses one delivery (for
    protocol tests). With ``config.keep_iterates`` the global ``z`` after each
    round is kept.
    """
    config = config or SolverConfig()
    nodes = build_nodes(form, cons, z0, L)
    L = nodes[0].L if nodes else float(L or 1.0)
    order = list(range(len(nodes))) if order is None else [int(i) for i in order]
    res = DistributedResult(gather(nodes, form), 0, False, 0, L)
    if config.keep_iterates:
        res.iterates.append(res.z.copy())
    for k in range(1, config.max_iter + 1):
        zhat = {st.node: local_extrapolate(st, k, config.momentum) for st in nodes}
        inboxes = {st.node: Inbox(st.node, st.neighbors, k) for st in nodes}
        # broadcast, then barrier: every round-k message lands before any update
        for st in nodes:
            payload = zhat[st.node][0]
            for j in st.neighbors:
                j = int(j)
                res.messages += 1
                if drop is not None and drop == (k, st.node, j):
                    continue
                inboxes[j].deliver(RoundMessage(st.node, k, payload))
                if log_messages:
                    res.log.append((k, st.node, j, payload.size))
        new = {}
        for i in order:
            st = nodes[i]
            nbr = neighbor_positions(st, inboxes[i])
            x_new = update_position(st, zhat[i], nbr)
            new[i] = (x_new, _edge_step(st, zhat[i], nbr))
        step2 = norm2 = 0.0
        for st in nodes:
            old = (st.x, st.aux)
            st.prev = old
            st.x, st.aux = new[st.node]
            ds, dn = _step_and_norm(st, old)
            if not (math.isfinite(ds) and math.isfinite(dn)):
                raise DivergenceError(f"divergence: non-finite values at node {st.node} in round {k}",
                                      iteration=k, node=st.node)
            step2 += ds
            norm2 += dn
        if audit:
            for box in inboxes.values():
                res.accesses.extend(box.accesses)
        if config.keep_iterates:
            res.iterates.append(gather(nodes, form))
        res.iterations = k
        if math.sqrt(step2) / max(1.0, math.sqrt(norm2)) < config.tol:
            res.converged = True
            break
    res.z = gather(nodes, form)
    return res
