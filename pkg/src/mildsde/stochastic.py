"""Brownian machinery, Ito integration, and mild-solution solvers.

The Wiener increments are generated by a counter-based construction: a
keyed integer hash (seed, path, level, index) feeds the inverse normal
CDF, and a dyadic midpoint-bridge descends from a fixed top scale to the
requested step.  Consequences that the rest of the library relies on:

* regeneration from (seed, dt, n_steps, n_paths) is bit-identical and
  order-independent across paths;
* halving dt with the same seed yields increments whose pairwise sums
  equal the coarse increments *exactly* (increments are quantized to a
  per-level power-of-two lattice, making the bridge sums integer-exact);
* extending the horizon preserves the common prefix.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import linalg, operators
from .errors import AdaptednessError, DimensionMismatch, GridMismatch

__all__ = [
    "BrownianEnsemble",
    "AdaptedSignal",
    "NoiseOp",
    "TrajectoryEnsemble",
    "LinearSystemSpec",
    "sample_brownian",
    "ito_integral",
    "stochastic_convolution",
    "convolution_yosida_bound_check",
    "solve_linear_sde",
    "phi_w",
    "phi_w_fixed_point_residual",
    "lax_phillips_assemble",
    "lax_crosscheck",
    "exact_controllability_test",
]

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)
_TOP_LEVEL = 64  # dyadic anchor scale; any sane dt sits far below it


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M2
    z = (z ^ (z >> np.uint64(27))) * _M3
    return z ^ (z >> np.uint64(31))


def _uniforms(seed, paths, level, idx):
    """Open-interval uniforms indexed by (seed, path, level, idx)."""
    with np.errstate(over="ignore"):
        z = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _M1)
        z = _mix(z + np.uint64(level & 0xFFFFFFFFFFFFFFFF) * _M1)
        z = _mix(z ^ (paths * _M2))
        z = _mix(z ^ (idx * _M3))
    return (np.right_shift(z, np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _bridge_increments(seed, dt, n_steps, n_paths):
    """Descend the dyadic bridge from the top scale to step dt."""
    frac, base_level = np.frexp(dt)
    base_level = int(base_level)
    if base_level > _TOP_LEVEL:
        raise ValueError(f"step {dt} exceeds the anchor scale 2^{_TOP_LEVEL}")
    paths = np.arange(n_paths, dtype=np.uint64)[:, None]

    def count(level):
        return -(-n_steps // (1 << (level - base_level)))

    def quantum(level):
        # ~ sqrt(scale) * 2^-26; parent quanta are integer multiples of
        # child quanta, which is what makes the bridge sums exact.
        return 2.0 ** (level // 2 - 26)

    level = _TOP_LEVEL
    width = float(np.ldexp(frac, level))
    q = quantum(level)
    idx = np.arange(count(level), dtype=np.uint64)[None, :]
    cur = np.round(ndtri(_uniforms(seed, paths, level, idx)) * np.sqrt(width) / q) * q
    while level > base_level:
        level -= 1
        k = count(level)
        width = float(np.ldexp(frac, level))
        q = quantum(level)
        n_pairs = (k + 1) // 2
        idx = np.arange(n_pairs, dtype=np.uint64)[None, :]
        xi = ndtri(_uniforms(seed, paths, level, idx)) * np.sqrt(width / 2.0)
        parent = cur[:, :n_pairs]
        even = np.round((parent / 2.0 + xi) / q) * q
        odd = parent - even
        cur = np.empty((n_paths, k))
        cur[:, 0::2] = even[:, : (k + 1) // 2]
        cur[:, 1::2] = odd[:, : k // 2]
    return cur


@dataclass(frozen=True)
class BrownianEnsemble:
    """Seeded grid of Wiener increments dW[p][n] ~ Normal(0, dt)."""

    seed: int
    dt: float
    increments: np.ndarray  # (n_paths, n_steps)

    @property
    def n_paths(self):
        return self.increments.shape[0]

    @property
    def n_steps(self):
        return self.increments.shape[1]

    @property
    def horizon(self):
        return self.dt * self.n_steps

    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def path_values(self):
        """W at the grid nodes, shape (n_paths, n_steps + 1), W(0) = 0."""
        w = np.zeros((self.n_paths, self.n_steps + 1))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w

    def refine(self):
        """The coupled half-step ensemble (same seed, same Brownian paths)."""
        return sample_brownian(self.seed, self.dt / 2.0, 2 * self.n_steps, self.n_paths)

    def check_grid(self, other):
        if self.dt != other.dt or self.n_steps != other.n_steps:
            raise GridMismatch("ensembles live on different grids")


def sample_brownian(seed, dt, n_steps, n_paths):
    """Generate a BrownianEnsemble from its defining tuple."""
    if dt <= 0:
        raise ValueError("step must be positive")
    if n_steps < 1 or n_paths < 1:
        raise ValueError("need at least one step and one path")
    inc = _bridge_increments(int(seed), float(dt), int(n_steps), int(n_paths))
    inc.setflags(write=False)
    return BrownianEnsemble(seed=int(seed), dt=float(dt), increments=inc)


class AdaptedSignal:
    """Grid signal u[p][n] whose node-n values may use only dW[:, :n].

    Construct through the classmethods: the builder interface hands the
    builder a read-only view of the *past* increments at each node, so a
    well-typed builder cannot read the future.  ``audit=True`` re-runs the
    builder against an ensemble whose future increments are redrawn and
    verifies the prefix outputs are unchanged, which catches builders that
    smuggle the whole ensemble in through a closure.
    """

    def __init__(self, values, dt, _adaptedness="constructed"):
        values = np.asarray(values)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise ValueError("signal values must have shape (paths, steps[, dim])")
        self.values = values
        self.dt = float(dt)
        self._adaptedness = _adaptedness

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def n_steps(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    @classmethod
    def deterministic(cls, fn_or_array, w):
        """Signal independent of the noise: fn(t_n) or an (n_steps,[dim]) array."""
        t = w.dt * np.arange(w.n_steps)
        if callable(fn_or_array):
            vals = np.asarray([np.atleast_1d(fn_or_array(tn)) for tn in t])
        else:
            vals = np.asarray(fn_or_array, dtype=float)
            if vals.ndim == 1:
                vals = vals[:, None]
            if vals.shape[0] != w.n_steps:
                raise GridMismatch("deterministic signal length does not match the grid")
        # broadcast view: per-path copies would be wasteful and are never written
        tiled = np.broadcast_to(vals[None, :, :], (w.n_paths,) + vals.shape)
        return cls(tiled, w.dt, _adaptedness="deterministic")

    @classmethod
    def from_history(cls, w, builder, width=1, audit=False):
        """Build u[p][n] = builder(n, t_n, past) with past = dW[:, :n] read-only."""
        inc = w.increments
        vals = np.empty((w.n_paths, w.n_steps, width))
        for n in range(w.n_steps):
            past = inc[:, :n]
            past.setflags(write=False)
            out = np.asarray(builder(n, n * w.dt, past))
            vals[:, n, :] = out.reshape(w.n_paths, width)
        sig = cls(vals, w.dt, _adaptedness="constructed")
        if audit:
            sig._audit(w, builder, width)
        return sig

    def _audit(self, w, builder, width):
        tampered = sample_brownian(w.seed ^ 0x5DEECE66D, w.dt, w.n_steps, w.n_paths)
        for n in (0, w.n_steps // 2, w.n_steps - 1):
            mixed = np.concatenate(
                [w.increments[:, :n], tampered.increments[:, n:]], axis=1
            )
            past = mixed[:, :n]
            past.setflags(write=False)
            out = np.asarray(builder(n, n * w.dt, past)).reshape(w.n_paths, width)
            if not np.array_equal(out, self.values[:, n, :]):
                raise AdaptednessError(
                    f"builder output at node {n} changed when future increments "
                    "were redrawn; the signal is not adapted"
                )

    def check_grid(self, w):
        if self.n_steps != w.n_steps or self.dt != w.dt:
            raise GridMismatch("signal and ensemble grids differ")

    def scalar_values(self):
        if self.width != 1:
            raise DimensionMismatch("expected a scalar signal")
        return self.values[:, :, 0]


@dataclass(frozen=True)
class NoiseOp:
    """Bounded linear noise map on the state space."""

    multipliers: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if (self.multipliers is None) == (self.matrix is None):
            raise ValueError("exactly one of multipliers / matrix must be given")
        if self.multipliers is not None:
            object.__setattr__(
                self,
                "multipliers",
                np.atleast_1d(np.asarray(self.multipliers, dtype=complex)),
            )
        else:
            object.__setattr__(
                self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=complex))
            )

    @classmethod
    def per_mode(cls, multipliers):
        return cls(multipliers=multipliers)

    @classmethod
    def dense(cls, matrix):
        return cls(matrix=matrix)

    @classmethod
    def zero(cls, dim):
        return cls(multipliers=np.zeros(dim))

    @classmethod
    def identity(cls, dim):
        return cls(multipliers=np.ones(dim))

    @property
    def dim(self):
        return self.multipliers.size if self.multipliers is not None else self.matrix.shape[1]

    @property
    def operator_norm(self):
        if self.multipliers is not None:
            return float(np.max(np.abs(self.multipliers))) if self.multipliers.size else 0.0
        return float(np.linalg.norm(self.matrix, 2))

    def apply(self, x):
        x = np.asarray(x, dtype=complex)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch("noise map dimension mismatch")
        if self.multipliers is not None:
            return x * self.multipliers
        return x @ self.matrix.T


@dataclass
class TrajectoryEnsemble:
    """States X[p][n] on the grid, with provenance for reproducibility."""

    states: np.ndarray  # (n_paths, n_steps + 1, dim) complex
    dt: float
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_nodes(self):
        return self.states.shape[1]

    @property
    def dim(self):
        return self.states.shape[2]

    def times(self):
        return self.dt * np.arange(self.n_nodes)

    def mean_square_norm(self, node=None):
        """(1/P) sum_p ||X[p][n]||^2, per node or at one node."""
        ms = np.mean(np.sum(np.abs(self.states) ** 2, axis=2), axis=0)
        return ms if node is None else float(ms[node])

    def component(self, k):
        return self.states[:, :, k]

    def max_node_ms_distance(self, other):
        """max_n sqrt((1/P) sum_p ||X[p][n] - Y[p][n]||^2)."""
        if self.states.shape != other.states.shape:
            raise GridMismatch("trajectory shapes differ")
        diff = np.sum(np.abs(self.states - other.states) ** 2, axis=2)
        return float(np.sqrt(np.max(np.mean(diff, axis=0))))


@dataclass(frozen=True)
class LinearSystemSpec:
    """The tuple (A, B, C, M) of the controlled/observed stochastic system."""

    gen: object
    control: operators.ControlOp | None = None
    observation: operators.ObservationOp | None = None
    noise: NoiseOp | None = None

    def __post_init__(self):
        if self.control is not None:
            self.control.check_attached(self.gen)
        if self.observation is not None:
            self.observation.check_attached(self.gen)
        if self.noise is not None and self.noise.dim != self.gen.dim:
            raise DimensionMismatch("noise map does not match the generator dimension")

    def validated(self, horizon=1.0):
        """Run the admissibility gates and return self (raises on divergence)."""
        if self.observation is not None:
            gamma = operators.obs_admissibility_constant(self.gen, self.observation, horizon)
            if not np.isfinite(gamma):
                raise ValueError("observation operator fails the admissibility test")
        if self.control is not None:
            res = operators.ctrl_admissibility_check(self.gen, self.control, horizon)
            if not res.admissible:
                raise ValueError("control operator fails the admissibility test")
        return self


def ito_integral(f, w):
    """Left-point (Ito) stochastic integral sum_n f[p][n] dW[p][n] per path."""
    f.check_grid(w)
    vals = f.values
    out = np.einsum("pnd,pn->pd", vals, w.increments)
    return out[:, 0] if vals.shape[2] == 1 else out


def _propagate(gen, dt):
    """One-step decay action: callable state -> T(dt) state, batched."""
    if gen.variant == "diagonal":
        dec = np.exp(gen.eigenvalues * dt)
        return lambda s: s * dec
    if gen.variant == "dense":
        mat = linalg.expm(gen.matrix * dt)
        return lambda s: s @ mat.T
    return lambda s: gen.semigroup(dt, s)


def stochastic_convolution(gen, zeta, w, seed_tag=None):
    """(T <> zeta)(t_n) = sum_{i<n} T(t_n - t_{i+1}) zeta(t_i) dW_i.

    Computed by the one-step recursion X_{n+1} = T(dt)(X_n + zeta_n dW_n),
    which reproduces the sum without O(N^2) work.  ``zeta`` is an adapted
    state-valued signal (width = gen.dim) or a constant state vector.
    """
    if isinstance(zeta, np.ndarray) and zeta.ndim == 1:
        const = np.asarray(zeta, dtype=complex)
        zeta_at = lambda n: const[None, :]
        width = const.size
    else:
        zeta.check_grid(w)
        zeta_at = lambda n: zeta.values[:, n, :]
        width = zeta.width
    if width != gen.dim:
        raise DimensionMismatch("convolution integrand must be state-valued")
    step = _propagate(gen, w.dt)
    states = np.zeros((w.n_paths, w.n_steps + 1, gen.dim), dtype=complex)
    cur = np.zeros((w.n_paths, gen.dim), dtype=complex)
    for n in range(w.n_steps):
        cur = step(cur + zeta_at(n) * w.increments[:, n, None])
        states[:, n + 1] = cur
    return TrajectoryEnsemble(states=states, dt=w.dt, seed=w.seed)


def convolution_yosida_bound_check(gen, c_op, zeta, w, horizon=None, slack=0.10):
    """Check E int ||C (T<>zeta)||^2 <= gamma^2 E int ||zeta||^2 empirically.

    Returns (lhs, rhs, verdict); the observation acts channel-wise through
    its extended evaluation on represented states.
    """
    c_op.check_attached(gen)
    gamma = operators.obs_admissibility_constant(
        gen, c_op, horizon if horizon is not None else w.horizon
    )
    if not np.isfinite(gamma):
        raise ValueError("observation operator is not admissible; bound is void")
    conv = stochastic_convolution(gen, zeta, w)
    observed = c_op.apply(conv.states)
    obs_sq = np.sum(np.abs(observed) ** 2, axis=2)
    lhs = float(np.mean(np.trapezoid(obs_sq, dx=w.dt, axis=1)))
    if isinstance(zeta, np.ndarray):
        zeta_sq = np.full((w.n_paths, w.n_steps), np.sum(np.abs(zeta) ** 2))
    else:
        zeta_sq = np.sum(np.abs(zeta.values) ** 2, axis=2)
    rhs = gamma**2 * float(np.mean(np.sum(zeta_sq, axis=1) * w.dt))
    return {"lhs": lhs, "rhs": rhs, "verdict": bool(lhs <= rhs * (1.0 + slack)), "gamma": gamma}


def _control_weights(spec, dt):
    if spec.control is None:
        return None, None
    gen = spec.gen
    if gen.variant == "diagonal":
        _, weight = gen.propagator(dt)
        return "diagonal", weight
    if gen.variant == "dense":
        _, integral = gen.propagator(dt)
        return "dense", integral
    raise DimensionMismatch("controlled stepping needs a diagonal or dense generator")


def solve_linear_sde(spec, xi, u, w, provenance=None):
    """Exponential-Euler mild-solution scheme for dX = (AX + Bu)dt + M(X)dW.

    Per mode: x_{n+1} = e^{lam dt} x_n + b u_n phi(dt) + e^{lam dt} (MX_n) dW_n.
    Drift and control are integrated exactly per step; the noise uses the
    left-point Ito rule, giving strong order ~1/2.
    """
    gen = spec.gen
    xi = np.asarray(xi, dtype=complex)
    if xi.ndim == 1:
        xi = np.broadcast_to(xi, (w.n_paths, gen.dim))
    if xi.shape != (w.n_paths, gen.dim):
        raise DimensionMismatch("initial states must be (paths, dim) or (dim,)")
    if u is not None:
        if spec.control is None:
            raise DimensionMismatch("input signal given but the spec has no control operator")
        u.check_grid(w)
        if u._adaptedness not in ("constructed", "deterministic"):
            raise AdaptednessError("input signal was not built through the adapted interface")
    step = _propagate(gen, w.dt)
    kind, weight = _control_weights(spec, w.dt)
    noise = spec.noise
    states = np.empty((w.n_paths, w.n_steps + 1, gen.dim), dtype=complex)
    states[:, 0] = xi
    cur = np.array(xi, dtype=complex)
    for n in range(w.n_steps):
        bump = cur
        if noise is not None:
            bump = cur + noise.apply(cur) * w.increments[:, n, None]
        cur = step(bump)
        if u is not None:
            inj = spec.control.inject(
                u.scalar_values()[:, n] if spec.control.is_per_mode else u.values[:, n, :]
            )
            cur = cur + (inj * weight if kind == "diagonal" else inj @ weight.T)
        states[:, n + 1] = cur
    prov = dict(provenance or {})
    prov.setdefault("scheme", "exponential-euler")
    return TrajectoryEnsemble(states=states, dt=w.dt, seed=w.seed, provenance=prov)


def phi_w(spec, u, w):
    """The input-response operator: the mild solution started from zero."""
    return solve_linear_sde(spec, np.zeros(spec.gen.dim), u, w)


def phi_w_fixed_point_residual(spec, u, w):
    """Residual of Phi^W u = Phi~ u + (T <> M(Phi^W u)) on the grid.

    The computed trajectory is substituted into the right-hand side with the
    same increments; the max-over-nodes root-mean-square mismatch vanishes
    to scheme order (exactly when the noise map is zero).
    """
    traj = phi_w(spec, u, w)
    rhs = np.zeros_like(traj.states)
    if spec.control is not None and u is not None:
        kind, weight = _control_weights(spec, w.dt)
        step = _propagate(spec.gen, w.dt)
        cur = np.zeros((w.n_paths, spec.gen.dim), dtype=complex)
        for n in range(w.n_steps):
            cur = step(cur)
            inj = spec.control.inject(
                u.scalar_values()[:, n] if spec.control.is_per_mode else u.values[:, n, :]
            )
            cur = cur + (inj * weight if kind == "diagonal" else inj @ weight.T)
            rhs[:, n + 1] += cur
    if spec.noise is not None:
        zeta_vals = spec.noise.apply(traj.states[:, :-1, :])
        zeta = AdaptedSignal(zeta_vals, w.dt, _adaptedness="constructed")
        conv = stochastic_convolution(spec.gen, zeta, w)
        rhs += conv.states
    diff = np.sum(np.abs(traj.states - rhs) ** 2, axis=2)
    return float(np.sqrt(np.max(np.mean(diff, axis=0))))


@dataclass
class LaxPhillipsSystem:
    """Block generator on state + shifted-input space, with embedding info."""

    generator: operators.DenseGenerator
    state_dim: int
    grid_size: int
    grid_step: float
    horizon: float


def lax_phillips_assemble(spec, horizon, grid_size):
    """Assemble the block operator (A, B delta_0; 0, d/ds) on state + input grid.

    The shifted-input block is the one-sided difference realization of d/ds
    on a uniform grid over [0, horizon]; the input enters the state row
    through its value at the left grid end.  The block semigroup's upper
    left and upper right reproduce T(t) and the input convolution, giving
    an independent route to the mild solution.
    """
    gen = spec.gen
    if gen.variant not in ("diagonal", "dense"):
        raise DimensionMismatch("product-space assembly needs a diagonal or dense generator")
    if spec.control is not None and spec.control.input_dim != 1:
        raise DimensionMismatch("the product-space route carries a scalar input channel")
    k = gen.dim
    g = int(grid_size)
    if g < 2:
        raise ValueError("input grid needs at least two nodes")
    delta = horizon / (g - 1)
    a = np.diag(gen.eigenvalues) if gen.variant == "diagonal" else gen.matrix
    big = np.zeros((k + g, k + g), dtype=complex)
    big[:k, :k] = a
    if spec.control is not None:
        col = spec.control.inject(1.0)
        big[:k, k] = np.atleast_1d(col)
    shift = (np.diag(np.ones(g - 1), 1) - np.eye(g)) / delta
    big[k:, k:] = shift
    block_gen = operators.DenseGenerator(big, growth_bound=max(gen.growth_bound, 0.0))
    return LaxPhillipsSystem(
        generator=block_gen, state_dim=k, grid_size=g, grid_step=delta, horizon=horizon
    )


def _grid_samples(u, lax, w):
    """Sample the input signal onto the product-space grid (per path)."""
    t_grid = lax.grid_step * np.arange(lax.grid_size)
    t_sig = w.dt * np.arange(w.n_steps)
    vals = u.scalar_values()
    out = np.empty((w.n_paths, lax.grid_size), dtype=complex)
    idx = np.minimum(np.searchsorted(t_sig, t_grid, side="right") - 1, w.n_steps - 1)
    idx = np.maximum(idx, 0)
    out[:] = vals[:, idx]
    return out


def lax_crosscheck(spec, xi, u, w, grid_factor=16):
    """Mean-square max-node gap between the direct solver and the block route.

    Both solvers consume identical increments; the gap is dominated by the
    first-order smearing of the shifted-input block and contracts under dt
    refinement (the input grid step is tied to dt through ``grid_factor``).
    """
    direct = solve_linear_sde(spec, xi, u, w)
    grid_size = max(int(np.ceil(w.n_steps / grid_factor)) + 1, 2)
    lax = lax_phillips_assemble(spec, w.horizon, grid_size)
    k = lax.state_dim
    prop = linalg.expm(lax.generator.matrix * w.dt)
    xi = np.asarray(xi, dtype=complex)
    if xi.ndim == 1:
        xi = np.broadcast_to(xi, (w.n_paths, k))
    state = np.zeros((w.n_paths, k + lax.grid_size), dtype=complex)
    state[:, :k] = xi
    if u is not None:
        state[:, k:] = _grid_samples(u, lax, w)
    noise = spec.noise
    states = np.empty((w.n_paths, w.n_steps + 1, k), dtype=complex)
    states[:, 0] = state[:, :k]
    for n in range(w.n_steps):
        bump = state.copy()
        if noise is not None:
            bump[:, :k] += noise.apply(state[:, :k]) * w.increments[:, n, None]
        state = bump @ prop.T
        states[:, n + 1] = state[:, :k]
    block = TrajectoryEnsemble(states=states, dt=w.dt, seed=w.seed)
    return direct.max_node_ms_distance(block)


def exact_controllability_test(spec, tau, tol=1e-9):
    """Smallest singular value of the deterministic input Gramian on [0, tau].

    Surjectivity of the deterministic input map transfers to the stochastic
    system through the fixed-point correction, so sigma_min > tol is the
    (sufficient) controllability verdict at this truncation.
    """
    if spec.control is None:
        raise DimensionMismatch("controllability test needs a control operator")
    gen = spec.gen
    b = spec.control
    if gen.variant == "diagonal":
        lam = gen.eigenvalues
        rates = lam[:, None] + lam.conj()[None, :]
        bvec = b.coeffs[:, None] if b.is_per_mode else b.matrix
        w = (bvec @ bvec.conj().T) * (tau * linalg.phi1(rates * tau))
        w = 0.5 * (w + w.conj().T)
    else:
        bmat = b.coeffs[:, None] if b.is_per_mode else b.matrix
        w = linalg.vanloan_ctrl_gramian(gen.matrix, bmat, tau)
    eigs = np.linalg.eigvalsh(w)
    sigma_min = float(max(eigs[0], 0.0))
    return {
        "sigma_min": sigma_min,
        "gramian": w,
        "controllable": bool(sigma_min > tol),
    }
