"""Feedback policies with explicit forward/backward passes.

Two architectures share the input convention ``z = (phase, state)``:

* ``MoEPolicy`` -- a mixture of experts: one shared tanh latent layer,
  a gating head (sigmoid activations normalized to sum to one, or softmax
  as an option) and per-expert affine heads.  The network output is the
  gating-weighted convex combination of the expert outputs.
* ``MLPPolicy`` -- a plain two-layer tanh network of equal latent width.

Gradients are accumulated by hand through the layer formulas rather than
a taping framework, so the structure of the training losses stays visible
and testable term by term.  Expert outputs are multiplied by a fixed
per-system control scale so that optimizer steps of size ``lr`` move the
outputs a meaningful fraction of their physical range.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .systems import Array, InputError

log = logging.getLogger(__name__)

_MAGIC = "hamlearn-policy"
_VERSION = 1


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ForwardCache:
    z: Array
    h1: Array
    logits: Array
    s: Array
    s_sum: Array
    p: Array
    experts: Array  # scaled expert outputs [batch, n_experts, control_dim]
    u: Array


class MoEPolicy:
    def __init__(
        self,
        phase_dim: int,
        state_dim: int,
        control_dim: int,
        n_experts: int = 8,
        latent_dim: int = 32,
        gating: str = "sigmoid",
        control_scale: Array | None = None,
    ):
        if gating not in ("sigmoid", "softmax"):
            raise InputError(f"unknown gating activation {gating!r}")
        self.phase_dim = phase_dim
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.n_experts = n_experts
        self.latent_dim = latent_dim
        self.gating = gating
        self.control_scale = (
            np.ones(control_dim) if control_scale is None else np.asarray(control_scale, float)
        )
        d = phase_dim + state_dim
        self.W1 = np.zeros((latent_dim, d))
        self.b1 = np.zeros(latent_dim)
        self.Wg = np.zeros((n_experts, latent_dim))
        self.bg = np.zeros(n_experts)
        self.We = np.zeros((n_experts, control_dim, latent_dim))
        self.ce = np.zeros((n_experts, control_dim))

    @classmethod
    def init(cls, phase_dim, state_dim, control_dim, rng: np.random.Generator,
             n_experts: int = 8, latent_dim: int = 32, gating: str = "sigmoid",
             control_scale: Array | None = None) -> "MoEPolicy":
        """Randomly initialized policy (scaled uniform fan-in per layer)."""
        pol = cls(phase_dim, state_dim, control_dim, n_experts, latent_dim,
                  gating, control_scale)
        d = phase_dim + state_dim
        pol.W1 = _uniform_fan_in(rng, (latent_dim, d), d)
        pol.b1 = _uniform_fan_in(rng, (latent_dim,), d)
        pol.Wg = _uniform_fan_in(rng, (n_experts, latent_dim), latent_dim)
        pol.bg = _uniform_fan_in(rng, (n_experts,), latent_dim)
        pol.We = _uniform_fan_in(rng, (n_experts, control_dim, latent_dim), latent_dim)
        pol.ce = _uniform_fan_in(rng, (n_experts, control_dim), latent_dim)
        return pol

    # -- parameter vector ----------------------------------------------------

    def _params(self) -> list[Array]:
        return [self.W1, self.b1, self.Wg, self.bg, self.We, self.ce]

    def get_flat(self) -> Array:
        return np.concatenate([p.ravel() for p in self._params()])

    def set_flat(self, theta: Array) -> None:
        off = 0
        for p in self._params():
            p[...] = theta[off : off + p.size].reshape(p.shape)
            off += p.size
        if off != theta.size:
            raise InputError("parameter vector size mismatch")

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._params())

    # -- forward -------------------------------------------------------------

    def _gate(self, logits: Array) -> tuple[Array, Array, Array]:
        if self.gating == "sigmoid":
            s = 1.0 / (1.0 + np.exp(-logits))
            s_sum = s.sum(axis=-1, keepdims=True)
            return s, s_sum, s / s_sum
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        e_sum = e.sum(axis=-1, keepdims=True)
        return e, e_sum, e / e_sum

    def forward_batch(self, phase: Array, x: Array) -> ForwardCache:
        z = np.concatenate([np.atleast_2d(phase), np.atleast_2d(x)], axis=1)
        h1 = np.tanh(z @ self.W1.T + self.b1)
        logits = h1 @ self.Wg.T + self.bg
        s, s_sum, p = self._gate(logits)
        experts = (np.einsum("ekl,bl->bek", self.We, h1) + self.ce) * self.control_scale
        u = np.einsum("be,bek->bk", p, experts)
        return ForwardCache(z, h1, logits, s, s_sum, p, experts, u)

    def forward(self, phase: Array, x: Array) -> tuple[Array, Array, Array]:
        """Control, mixture weights and per-expert outputs at one input."""
        cache = self.forward_batch(phase[None, :], np.asarray(x, float)[None, :])
        return cache.u[0], cache.p[0], cache.experts[0]

    def __call__(self, phase: Array, x: Array) -> Array:
        return self.forward(phase, x)[0]

    # -- backward ------------------------------------------------------------

    def _gate_backward(self, cache: ForwardCache, d_p_weighted: Array) -> Array:
        """Map per-expert scalars ``c_e`` to logit gradients of ``sum_e p_e c_e``."""
        mean = np.einsum("be,be->b", cache.p, d_p_weighted)[:, None]
        if self.gating == "sigmoid":
            sp = cache.s * (1.0 - cache.s)
            return sp * (d_p_weighted - mean) / cache.s_sum
        return cache.p * (d_p_weighted - mean)

    def backward(self, cache: ForwardCache, du_experts: Array, h_experts: Array) -> Array:
        """Parameter gradient of ``sum_b sum_e p_be * H_be``.

        ``du_experts`` holds dH/du at each expert's output and ``h_experts``
        the corresponding H values, both from the same forward pass.
        """
        g_scaled = du_experts * self.control_scale
        dWe = np.einsum("be,bek,bl->ekl", cache.p, g_scaled, cache.h1)
        dce = np.einsum("be,bek->ek", cache.p, g_scaled)
        dlogits = self._gate_backward(cache, h_experts)
        dWg = dlogits.T @ cache.h1
        dbg = dlogits.sum(axis=0)
        dh1 = np.einsum("be,bek,ekl->bl", cache.p, g_scaled, self.We) + dlogits @ self.Wg
        dpre = dh1 * (1.0 - cache.h1**2)
        dW1 = dpre.T @ cache.z
        db1 = dpre.sum(axis=0)
        return np.concatenate(
            [dW1.ravel(), db1.ravel(), dWg.ravel(), dbg.ravel(), dWe.ravel(), dce.ravel()]
        )

    def backward_output(self, cache: ForwardCache, du: Array) -> Array:
        """Parameter gradient of a loss through the combined output only."""
        n_e = self.n_experts
        du_experts = np.repeat(du[:, None, :], n_e, axis=1)
        h_experts = np.einsum("bk,bek->be", du, cache.experts)
        return self.backward(cache, du_experts, h_experts)


class MLPPolicy:
    """Two-layer tanh network ``u = scale * (W2 tanh(W1 z + b1) + b2)``."""

    def __init__(self, phase_dim: int, state_dim: int, control_dim: int,
                 latent_dim: int = 32, control_scale: Array | None = None):
        self.phase_dim = phase_dim
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.latent_dim = latent_dim
        self.control_scale = (
            np.ones(control_dim) if control_scale is None else np.asarray(control_scale, float)
        )
        d = phase_dim + state_dim
        self.W1 = np.zeros((latent_dim, d))
        self.b1 = np.zeros(latent_dim)
        self.W2 = np.zeros((control_dim, latent_dim))
        self.b2 = np.zeros(control_dim)

    @classmethod
    def init(cls, phase_dim, state_dim, control_dim, rng: np.random.Generator,
             latent_dim: int = 32, control_scale: Array | None = None) -> "MLPPolicy":
        pol = cls(phase_dim, state_dim, control_dim, latent_dim, control_scale)
        d = phase_dim + state_dim
        pol.W1 = _uniform_fan_in(rng, (latent_dim, d), d)
        pol.b1 = _uniform_fan_in(rng, (latent_dim,), d)
        pol.W2 = _uniform_fan_in(rng, (control_dim, latent_dim), latent_dim)
        pol.b2 = _uniform_fan_in(rng, (control_dim,), latent_dim)
        return pol

    def _params(self) -> list[Array]:
        return [self.W1, self.b1, self.W2, self.b2]

    def get_flat(self) -> Array:
        return np.concatenate([p.ravel() for p in self._params()])

    def set_flat(self, theta: Array) -> None:
        off = 0
        for p in self._params():
            p[...] = theta[off : off + p.size].reshape(p.shape)
            off += p.size
        if off != theta.size:
            raise InputError("parameter vector size mismatch")

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._params())

    def forward_batch(self, phase: Array, x: Array) -> ForwardCache:
        z = np.concatenate([np.atleast_2d(phase), np.atleast_2d(x)], axis=1)
        h1 = np.tanh(z @ self.W1.T + self.b1)
        u = (h1 @ self.W2.T + self.b2) * self.control_scale
        empty = np.zeros((len(z), 0))
        return ForwardCache(z, h1, empty, empty, empty, empty, u[:, None, :], u)

    def forward(self, phase: Array, x: Array) -> Array:
        return self.forward_batch(phase[None, :], np.asarray(x, float)[None, :]).u[0]

    def __call__(self, phase: Array, x: Array) -> Array:
        return self.forward(phase, x)

    def backward_output(self, cache: ForwardCache, du: Array) -> Array:
        g = du * self.control_scale
        dW2 = np.einsum("bk,bl->kl", g, cache.h1)
        db2 = g.sum(axis=0)
        dh1 = g @ self.W2
        dpre = dh1 * (1.0 - cache.h1**2)
        dW1 = dpre.T @ cache.z
        db1 = dpre.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1.ravel(), dW2.ravel(), db2.ravel()])


Policy = MoEPolicy | MLPPolicy


# ---------------------------------------------------------------------------
# optimizer


class AMSGrad:
    """AMSGrad with bias correction; skips non-finite gradients."""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.v_hat = np.zeros(n_params)
        self.t = 0
        self.skipped = 0

    def step(self, theta: Array, grad: Array, lr: float) -> Array:
        if theta.shape != grad.shape:
            raise InputError("gradient shape does not match parameters")
        if not np.all(np.isfinite(grad)):
            self.skipped += 1
            log.warning("skipped optimizer step on non-finite gradient (%d so far)",
                        self.skipped)
            return theta
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        np.maximum(self.v_hat, self.v, out=self.v_hat)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat_corr = self.v_hat / (1.0 - self.beta2**self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat_corr) + self.eps)


# ---------------------------------------------------------------------------
# serialization


def save_policy(policy: Policy, path: str) -> None:
    """Versioned JSON header plus a little-endian float64 weight blob."""
    if isinstance(policy, MoEPolicy):
        header = {
            "magic": _MAGIC,
            "version": _VERSION,
            "arch": "moe",
            "dims": {
                "phase": policy.phase_dim,
                "state": policy.state_dim,
                "control": policy.control_dim,
            },
            "latent": policy.latent_dim,
            "n_experts": policy.n_experts,
            "activation": policy.gating,
            "control_scale": list(policy.control_scale),
        }
    else:
        header = {
            "magic": _MAGIC,
            "version": _VERSION,
            "arch": "mlp",
            "dims": {
                "phase": policy.phase_dim,
                "state": policy.state_dim,
                "control": policy.control_dim,
            },
            "latent": policy.latent_dim,
            "activation": "tanh",
            "control_scale": list(policy.control_scale),
        }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        f.write(policy.get_flat().astype("<f8").tobytes())


def load_policy(path: str) -> Policy:
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise InputError(f"corrupted policy header in {path}") from err
    if header.get("magic") != _MAGIC or header.get("version") != _VERSION:
        raise InputError(f"unsupported policy format in {path}")
    dims = header["dims"]
    scale = np.asarray(header["control_scale"], float)
    if header["arch"] == "moe":
        pol: Policy = MoEPolicy(
            dims["phase"], dims["state"], dims["control"],
            n_experts=header["n_experts"], latent_dim=header["latent"],
            gating=header["activation"], control_scale=scale,
        )
    elif header["arch"] == "mlp":
        pol = MLPPolicy(dims["phase"], dims["state"], dims["control"],
                        latent_dim=header["latent"], control_scale=scale)
    else:
        raise InputError(f"unknown policy architecture {header['arch']!r}")
    theta = np.frombuffer(blob, dtype="<f8")
    if theta.size != pol.n_params:
        raise InputError("policy weight blob size mismatch")
    pol.set_flat(theta.copy())
    return pol
