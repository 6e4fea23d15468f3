"""Problem instances: per-state observations, derived means, stability constants.

An instance couples a finite chain {Z_k} with observation pairs
(A(z), b(z)).  The recursion theta_k = theta_{k-1} - alpha (A(Z_k)
theta_{k-1} - b(Z_k)) targets theta* solving Abar theta* = bbar, where
Abar, bbar are the stationary means.  Centered versions are

    Atilde(z) = A(z) - Abar,   btilde(z) = b(z) - bbar,
    eps(z)    = Atilde(z) theta* - btilde(z),

so that pi(Atilde) = 0, pi(btilde) = 0, pi(eps) = 0 by construction.

Stability constants come from the Lyapunov equation Abar^T Q + Q Abar = I:
a = 1/(2 ||Q||), kappa_Q the condition number of Q, and the step-size
ceilings alpha_inf (noise-free contraction) and the Markov-noise
thresholds alpha_inf_markov / alpha_q_markov(q) / alpha_p_bias(p).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .chain import FiniteMarkovChain
from .errors import (
    CenteringViolation,
    ConfigError,
    InconsistentDims,
    LsaLabError,
    NotHurwitz,
    SingularSystem,
)

_HURWITZ_TOL = 1e-9


def _spec_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


@dataclass(frozen=True)
class LsaModel:
    """Immutable problem instance; all arrays are read-only views."""

    dim: int
    chain: FiniteMarkovChain
    a_of: np.ndarray      # (S, d, d)
    b_of: np.ndarray      # (S, d)
    a_bar: np.ndarray     # (d, d)
    b_bar: np.ndarray     # (d,)
    theta_star: np.ndarray
    a_tilde: np.ndarray   # (S, d, d)
    b_tilde: np.ndarray   # (S, d)
    eps_of: np.ndarray    # (S, d)
    b_a: float
    eps_sup: float

    def __post_init__(self):
        for arr in (self.a_of, self.b_of, self.a_bar, self.b_bar, self.theta_star,
                    self.a_tilde, self.b_tilde, self.eps_of):
            arr.setflags(write=False)


@dataclass(frozen=True)
class StabilityConstants:
    """Lyapunov constants, optionally completed with Markov-noise thresholds."""

    lyapunov_q: np.ndarray
    a: float
    kappa_q: float
    alpha_inf: float
    b_q: float | None = None
    b_a: float | None = None
    t_mix: int | None = None
    alpha_inf_markov: float | None = None
    c_gamma: float | None = None

    def _require_markov(self):
        if self.alpha_inf_markov is None or self.c_gamma is None:
            raise LsaLabError(
                "Markov thresholds not computed; complete the constants with "
                "markov_constants(model) first"
            )

    def alpha_q_markov(self, q: float) -> float:
        """Step ceiling keeping q-th moments of the matrix products stable."""
        self._require_markov()
        if q < 2:
            raise ValueError("q must be >= 2")
        return min(self.alpha_inf_markov, (self.a / (12.0 * self.c_gamma)) / q)

    def alpha_p_bias(self, p: float, dim: int) -> float:
        """Step ceiling for the p-th moment bias expansion in dimension dim."""
        self._require_markov()
        if p < 2:
            raise ValueError("p must be >= 2")
        q_eff = p * (1.0 + math.log(dim))
        val = min(self.alpha_q_markov(q_eff), 1.0 / (1.0 + self.b_a), 1.0 / (self.a * p))
        return val / self.t_mix


def solve_target(a_bar, b_bar) -> np.ndarray:
    """Solve Abar theta = bbar with a residual acceptance check."""
    a_bar = np.asarray(a_bar, dtype=np.float64)
    b_bar = np.asarray(b_bar, dtype=np.float64)
    try:
        theta = np.linalg.solve(a_bar, b_bar)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"mean system is singular: {exc}") from exc
    resid = np.linalg.norm(a_bar @ theta - b_bar)
    if resid > 1e-10 * (1.0 + np.linalg.norm(b_bar)):
        raise SingularSystem(f"mean system too ill-conditioned (residual {resid:.3e})")
    return theta


def hurwitz_margin(a_bar) -> float:
    """Smallest real part among the eigenvalues of Abar."""
    return float(np.min(np.real(np.linalg.eigvals(np.asarray(a_bar, dtype=np.float64)))))


def _q_weighted_norm(a_bar: np.ndarray, q: np.ndarray) -> float:
    evals, vecs = np.linalg.eigh(q)
    sq = vecs @ np.diag(np.sqrt(evals)) @ vecs.T
    isq = vecs @ np.diag(1.0 / np.sqrt(evals)) @ vecs.T
    return _spec_norm(sq @ a_bar @ isq)


def lyapunov_constants(a_bar, b_a: float | None = None) -> StabilityConstants:
    """Solve Abar^T Q + Q Abar = I and derive the contraction constants.

    The Lyapunov operator is inverted as the d^2 x d^2 linear system
    (kron(Abar^T, I) + kron(I, Abar^T)) vec(Q) = vec(I) in row-major vec
    convention.  Supplying ``b_a`` additionally fills b_q = 2 sqrt(kappa) b_a.
    """
    a_bar = np.asarray(a_bar, dtype=np.float64)
    d = a_bar.shape[0]
    margin = hurwitz_margin(a_bar)
    if margin <= _HURWITZ_TOL:
        raise NotHurwitz(f"min Re(eig(Abar)) = {margin:.3e} <= {_HURWITZ_TOL}")
    eye = np.eye(d)
    op = np.kron(a_bar.T, eye) + np.kron(eye, a_bar.T)
    try:
        q_vec = np.linalg.solve(op, eye.ravel())
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"Lyapunov operator is singular: {exc}") from exc
    q = q_vec.reshape(d, d)
    q = 0.5 * (q + q.T)
    evals = np.linalg.eigvalsh(q)
    if evals[0] <= 0.0:
        raise SingularSystem("Lyapunov solution is not positive definite")
    q_norm = float(evals[-1])
    a = 1.0 / (2.0 * q_norm)
    kappa = float(evals[-1] / evals[0])
    norm_a_q = _q_weighted_norm(a_bar, q)
    alpha_inf = min(0.5 / (norm_a_q**2 * q_norm), q_norm)
    b_q = None if b_a is None else 2.0 * math.sqrt(kappa) * b_a
    return StabilityConstants(
        lyapunov_q=q, a=a, kappa_q=kappa, alpha_inf=float(alpha_inf), b_q=b_q
    )


def markov_constants(model: LsaModel, sc: StabilityConstants | None = None) -> StabilityConstants:
    """Complete the constants with the Markov-noise step thresholds."""
    if sc is None:
        sc = lyapunov_constants(model.a_bar, model.b_a)
    b_a = model.b_a
    t_mix = model.chain.mixing_time
    root_kappa = math.sqrt(sc.kappa_q)
    ceil_term = math.ceil(8.0 * root_kappa * b_a / sc.a)
    alpha_inf_markov = (
        min(sc.alpha_inf, 1.0 / (root_kappa * b_a), sc.a / (6.0 * math.e * sc.kappa_q * b_a))
        / ceil_term
    )
    c_gamma = 4.0 * (root_kappa * b_a + sc.a / 6.0) ** 2 * ceil_term
    return dataclasses.replace(
        sc,
        b_q=2.0 * root_kappa * b_a,
        b_a=b_a,
        t_mix=t_mix,
        alpha_inf_markov=float(alpha_inf_markov),
        c_gamma=float(c_gamma),
    )


def step_size_thresholds(
    model: LsaModel,
    sc: StabilityConstants | None = None,
    p: float = 2.0,
    q: float | None = None,
) -> tuple[float, float, float]:
    """Evaluate (alpha_inf_markov, alpha_q_markov(q), alpha_p_bias(p))."""
    full = markov_constants(model, sc)
    if q is None:
        q = p
    return (
        full.alpha_inf_markov,
        full.alpha_q_markov(q),
        full.alpha_p_bias(p, model.dim),
    )


def _stack_states(raw, name: str, num_states: int) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(raw, dtype=np.float64))
    if arr.shape[0] != num_states:
        raise InconsistentDims(
            f"{name} lists {arr.shape[0]} states but the chain has {num_states}"
        )
    return arr


def build_model(spec: dict) -> LsaModel:
    """Construct an LsaModel from a parsed config mapping.

    Observations come either as per-state tables ``a`` (S x d x d) and
    ``b`` (S x d), or in two-state interpolation form ``a0, a1, b0, b1``
    with A(z) = z A1 + (1-z) A0 for z in {0, 1}.  Optional declared
    means ``a_bar``/``b_bar`` are cross-checked against the stationary
    averages.
    """
    if "transition" not in spec:
        raise ConfigError("model config is missing 'transition'")
    chain = FiniteMarkovChain(spec["transition"])
    s = chain.num_states

    per_state = "a" in spec or "b" in spec
    interp = any(k in spec for k in ("a0", "a1", "b0", "b1"))
    if per_state and interp:
        raise ConfigError("give either per-state tables a/b or the a0/a1/b0/b1 form, not both")
    if per_state:
        if "a" not in spec or "b" not in spec:
            raise ConfigError("per-state form needs both 'a' and 'b'")
        a_of = _stack_states(spec["a"], "a", s)
        b_of = _stack_states(spec["b"], "b", s)
    elif interp:
        missing = [k for k in ("a0", "a1", "b0", "b1") if k not in spec]
        if missing:
            raise ConfigError(f"interpolation form is missing {missing}")
        if s != 2:
            raise InconsistentDims("a0/a1/b0/b1 form requires a two-state chain")
        # states are the labels z in {0, 1}: A(0) = a0, A(1) = a1 exactly
        a_of = np.ascontiguousarray(
            np.stack([np.asarray(spec["a0"], dtype=np.float64),
                      np.asarray(spec["a1"], dtype=np.float64)])
        )
        b_of = np.ascontiguousarray(
            np.stack([np.asarray(spec["b0"], dtype=np.float64),
                      np.asarray(spec["b1"], dtype=np.float64)])
        )
    else:
        raise ConfigError("model config needs observations: a/b or a0/a1/b0/b1")

    if a_of.ndim != 3 or a_of.shape[1] != a_of.shape[2]:
        raise InconsistentDims(f"per-state a must be S x d x d, got {a_of.shape}")
    d = a_of.shape[1]
    if b_of.ndim != 2 or b_of.shape[1] != d:
        raise InconsistentDims(f"per-state b must be S x {d}, got {b_of.shape}")

    pi = chain.stationary
    a_bar = np.einsum("z,zij->ij", pi, a_of)
    b_bar = pi @ b_of

    for key, computed in (("a_bar", a_bar), ("b_bar", b_bar)):
        if key in spec:
            declared = np.asarray(spec[key], dtype=np.float64)
            if declared.shape != computed.shape:
                raise InconsistentDims(f"declared {key} has shape {declared.shape}")
            err = np.max(np.abs(declared - computed))
            if err > 1e-8 * (1.0 + np.max(np.abs(computed))):
                raise CenteringViolation(
                    f"declared {key} deviates from the stationary mean by {err:.3e}"
                )

    margin = hurwitz_margin(a_bar)
    if margin <= _HURWITZ_TOL:
        raise NotHurwitz(f"min Re(eig(Abar)) = {margin:.3e} <= {_HURWITZ_TOL}")
    theta_star = solve_target(a_bar, b_bar)

    a_tilde = np.ascontiguousarray(a_of - a_bar)
    b_tilde = np.ascontiguousarray(b_of - b_bar)
    eps_of = np.ascontiguousarray(
        np.einsum("zij,j->zi", a_tilde, theta_star) - b_tilde
    )
    b_a = max(
        max(_spec_norm(a_of[z]) for z in range(s)),
        max(_spec_norm(a_tilde[z]) for z in range(s)),
    )
    eps_sup = max(float(np.linalg.norm(eps_of[z])) for z in range(s))

    return LsaModel(
        dim=d,
        chain=chain,
        a_of=a_of,
        b_of=b_of,
        a_bar=np.ascontiguousarray(a_bar),
        b_bar=np.ascontiguousarray(b_bar),
        theta_star=np.ascontiguousarray(theta_star),
        a_tilde=a_tilde,
        b_tilde=b_tilde,
        eps_of=eps_of,
        b_a=float(b_a),
        eps_sup=float(eps_sup),
    )


def echo_config(model: LsaModel) -> dict:
    """Canonical per-state config mapping that rebuilds this model."""
    return {
        "transition": model.chain.transition.tolist(),
        "a": model.a_of.tolist(),
        "b": model.b_of.tolist(),
        "a_bar": model.a_bar.tolist(),
        "b_bar": model.b_bar.tolist(),
    }
