"""Built-in vector-field models with hard-coded analytic derivatives.

Each factory returns a VectorFieldSystem whose callables accept batched
states of shape (..., n).  User-supplied models built from coefficient
tables fall back to finite-difference derivatives (see
VectorFieldSystem._fd).
"""

from __future__ import annotations

import numpy as np

from .young import VectorFieldSystem


def _const(shape):
    def fn(y):
        return np.broadcast_to(np.zeros(shape), y.shape[:-1] + shape).copy()
    return fn


def affine_model(drift: float = 0.5) -> VectorFieldSystem:
    """n = d = 1, sigma == 1, constant drift: the exactly solvable case."""

    def sigma(y):
        return np.ones(y.shape[:-1] + (1, 1))

    def b(y):
        return np.full(y.shape[:-1] + (1,), drift)

    return VectorFieldSystem(
        n=1, d=1, sigma_fn=sigma, b_fn=b,
        sigma_derivs={1: _const((1, 1, 1)), 2: _const((1, 1, 1, 1)),
                      3: _const((1, 1, 1, 1, 1))},
        b_derivs={1: _const((1, 1)), 2: _const((1, 1, 1)), 3: _const((1, 1, 1, 1))},
        max_order=3, name=f"affine(b={drift})",
    )


def sin_model(offset: float = 2.0, drift: float = 1.0) -> VectorFieldSystem:
    """n = d = 1 with sigma(y) = sin(y) + offset (elliptic) and constant drift."""

    def sigma(y):
        return (np.sin(y[..., 0]) + offset)[..., None, None]

    def dsigma(y):
        return np.cos(y[..., 0])[..., None, None, None]

    def d2sigma(y):
        return (-np.sin(y[..., 0]))[..., None, None, None, None]

    def d3sigma(y):
        return (-np.cos(y[..., 0]))[..., None, None, None, None, None]

    def b(y):
        return np.full(y.shape[:-1] + (1,), drift)

    return VectorFieldSystem(
        n=1, d=1, sigma_fn=sigma, b_fn=b,
        sigma_derivs={1: dsigma, 2: d2sigma, 3: d3sigma},
        b_derivs={1: _const((1, 1)), 2: _const((1, 1, 1)), 3: _const((1, 1, 1, 1))},
        max_order=3, name="1d-sin",
    )


def quad_model(scale: float = 0.25) -> VectorFieldSystem:
    """n = d = 1, sigma(y) = 1 + scale * y^2, no drift.

    The intrinsic distance has the closed form
    integral of dy / (1 + scale y^2) = arctan(sqrt(scale) y) / sqrt(scale).
    """

    def sigma(y):
        return (1.0 + scale * y[..., 0] ** 2)[..., None, None]

    def dsigma(y):
        return (2.0 * scale * y[..., 0])[..., None, None, None]

    def d2sigma(y):
        return np.full(y.shape[:-1] + (1, 1, 1, 1), 2.0 * scale)

    return VectorFieldSystem(
        n=1, d=1, sigma_fn=sigma, b_fn=_const((1,)),
        sigma_derivs={1: dsigma, 2: d2sigma, 3: _const((1, 1, 1, 1, 1))},
        b_derivs={1: _const((1, 1)), 2: _const((1, 1, 1))},
        max_order=3, name="1d-quad",
    )


def commuting_frame_model(amplitude: float = 0.3) -> VectorFieldSystem:
    """Elliptic 2-D frame with commuting fields.

    V_1 = (2 + amplitude sin y_1, 0), V_2 = (0, 2 + amplitude cos y_2):
    each field only depends on its own coordinate, so all Lie brackets
    vanish and the intrinsic distance splits into two one-dimensional
    integrals.  The moderate amplitude keeps the diffusion matrix well
    conditioned everywhere.
    """

    def sigma(y):
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = 2.0 + amplitude * np.sin(y[..., 0])
        out[..., 1, 1] = 2.0 + amplitude * np.cos(y[..., 1])
        return out

    def dsigma(y):
        out = np.zeros(y.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = amplitude * np.cos(y[..., 0])
        out[..., 1, 1, 1] = -amplitude * np.sin(y[..., 1])
        return out

    def d2sigma(y):
        out = np.zeros(y.shape[:-1] + (2, 2, 2, 2))
        out[..., 0, 0, 0, 0] = -amplitude * np.sin(y[..., 0])
        out[..., 1, 1, 1, 1] = -amplitude * np.cos(y[..., 1])
        return out

    return VectorFieldSystem(
        n=2, d=2, sigma_fn=sigma, b_fn=_const((2,)),
        sigma_derivs={1: dsigma, 2: d2sigma},
        b_derivs={1: _const((2, 2)), 2: _const((2, 2, 2))},
        max_order=2, name="2d-commuting-frame",
    )


def rank_deficient_model() -> VectorFieldSystem:
    """2-D frame whose columns are parallel at the origin.

    sigma(y) = [[1, 1], [0, y_1]]: at y = 0 both columns equal e_1, so
    the diffusion matrix is singular there and only state fluctuation
    restores invertibility.
    """

    def sigma(y):
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = 1.0
        out[..., 1, 1] = y[..., 0]
        return out

    def dsigma(y):
        out = np.zeros(y.shape[:-1] + (2, 2, 2))
        out[..., 1, 1, 0] = 1.0
        return out

    return VectorFieldSystem(
        n=2, d=2, sigma_fn=sigma, b_fn=_const((2,)),
        sigma_derivs={1: dsigma, 2: _const((2, 2, 2, 2))},
        b_derivs={1: _const((2, 2)), 2: _const((2, 2, 2))},
        max_order=2, name="2d-rank-deficient",
    )


def from_table(sigma_table, n: int, d: int, b_table=None,
               name: str = "user") -> VectorFieldSystem:
    """Build a system from plain per-point callables.

    sigma_table(y) must return an (n, d) matrix for a single state y;
    derivatives are obtained by central finite differences, so only
    zeroth-order callables are required.
    """

    def sigma(y):
        flat = y.reshape(-1, y.shape[-1])
        vals = np.stack([np.asarray(sigma_table(p), dtype=float) for p in flat])
        if vals.shape[1:] != (n, d):
            raise ValueError(f"sigma table must return an ({n}, {d}) matrix")
        return vals.reshape(y.shape[:-1] + (n, d))

    if b_table is None:
        b = _const((n,))
    else:
        def b(y):
            flat = y.reshape(-1, y.shape[-1])
            vals = np.stack([np.asarray(b_table(p), dtype=float) for p in flat])
            return vals.reshape(y.shape[:-1] + (n,))

    return VectorFieldSystem(n=n, d=d, sigma_fn=sigma, b_fn=b,
                             max_order=3, name=name)


REGISTRY = {
    "affine": affine_model,
    "1d-sin": sin_model,
    "1d-quad": quad_model,
    "2d-commuting-frame": commuting_frame_model,
    "2d-rank-deficient": rank_deficient_model,
}


def get_model(name: str, **kwargs) -> VectorFieldSystem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown model {name!r}; available: {sorted(REGISTRY)}"
        ) from None
    return factory(**kwargs)
