"""Monotone vector fields A(y, xi) and their structure-condition audit.

Fields are 1-periodic in y, vanish at xi = 0, and carry declared constants
(mu0 monotonicity, mu1 Lipschitz in xi, mu2 / tau Hoelder in y).  The audit
samples quotients empirically and scans the symmetrized xi-Jacobian, whose
eigenvalue extremes bound every pair quotient.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from .errors import AuditFailed


@dataclasses.dataclass(frozen=True)
class VectorField:
    """A(y, xi): vectorized field with its xi-Jacobian and declared constants."""

    tag: str
    eval_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mu0: float
    mu1: float
    mu2: float = 0.0
    tau: float = 1.0
    audit_radius: float = np.inf

    def __call__(self, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.eval_fn(np.asarray(y, dtype=float), np.asarray(xi, dtype=float))

    def jacobian(self, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.jac_fn(np.asarray(y, dtype=float), np.asarray(xi, dtype=float))


def make_linear(
    coeff_fn: Callable[[np.ndarray], np.ndarray],
    tag: str,
    mu0: float,
    mu1: float,
    mu2: float = 0.0,
    tau: float = 1.0,
) -> VectorField:
    """Linear family A(y, xi) = a(y) xi with a(y) a (m, 2, 2) coefficient."""

    def ev(y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        a = coeff_fn(y)
        return np.einsum("...dc,...c->...d", a, xi)

    def jac(y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        a = coeff_fn(y)
        return np.broadcast_to(a, xi.shape[:-1] + (2, 2)).copy()

    return VectorField(tag=tag, eval_fn=ev, jac_fn=jac, mu0=mu0, mu1=mu1,
                       mu2=mu2, tau=tau)


def make_identity() -> VectorField:
    def coeff(y: np.ndarray) -> np.ndarray:
        eye = np.eye(2)
        return np.broadcast_to(eye, np.asarray(y).shape[:-1] + (2, 2))

    return make_linear(coeff, tag="identity", mu0=1.0, mu1=1.0, mu2=0.0)


def make_checkerboard(v_even: float = 1.0, v_odd: float = 4.0) -> VectorField:
    """Scalar coefficient taking v_even / v_odd on the 2x2 sign checkerboard of Y."""

    def coeff(y: np.ndarray) -> np.ndarray:
        yy = np.asarray(y, dtype=float)
        # shift so cell quadrants of Y = [-1/2,1/2)^2 tile periodically
        q = np.floor(2.0 * (yy + 0.5))
        even = (q[..., 0] + q[..., 1]) % 2 == 0
        vals = np.where(even, v_even, v_odd)
        out = np.zeros(yy.shape[:-1] + (2, 2))
        out[..., 0, 0] = vals
        out[..., 1, 1] = vals
        return out

    lo, hi = min(v_even, v_odd), max(v_even, v_odd)
    return make_linear(coeff, tag=f"checkerboard({v_even},{v_odd})",
                       mu0=lo, mu1=hi, mu2=0.0, tau=1.0)


def _default_modulation(y: np.ndarray) -> np.ndarray:
    return np.sin(2 * np.pi * y[..., 0]) * np.sin(2 * np.pi * y[..., 1])


def paper_example_eigen_range(
    delta: float, radius: float, n_b: int = 201, n_r: int = 801
) -> tuple[float, float]:
    """Closed-form eigenvalue extremes of the quasi-linear example field.

    The symmetrized xi-Jacobian of A = (1+|xi|^2)/(1+b|xi|^2) xi has
    eigenvalues g = (1+r)/(1+br) and (b r^2 + (3-b) r + 1)/(1+br)^2 with
    r = |xi|^2; scanning b in [1-delta, 1+delta] and r in [0, radius^2]
    gives rigorous min/max over the audit ball.
    """
    b = np.linspace(1.0 - abs(delta), 1.0 + abs(delta), n_b)
    r = np.linspace(0.0, radius ** 2, n_r)
    bb, rr = np.meshgrid(b, r, indexing="ij")
    # the denominator vanishes for strongly negative b; the resulting inf
    # bounds are the honest answer for a singular parameter range
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (1.0 + rr) / (1.0 + bb * rr)
        radial = (bb * rr ** 2 + (3.0 - bb) * rr + 1.0) / (1.0 + bb * rr) ** 2
    lo = min(float(np.nanmin(g)), float(np.nanmin(radial)))
    hi = max(float(np.nanmax(g)), float(np.nanmax(radial)))
    return lo, hi


def make_paper_example(
    delta: float,
    modulation: Callable[[np.ndarray], np.ndarray] | None = None,
    radius: float = 4.0,
) -> VectorField:
    """Quasi-linear field A(y, xi) = (1+|xi|^2)/(1+b(y)|xi|^2) xi, b = 1 + delta*s(y).

    Structure constants are taken from the closed-form Jacobian eigenvalue
    scan over |xi| <= radius; they may be non-positive for large delta, in
    which case audit_structure will refuse the field.
    """
    s = modulation if modulation is not None else _default_modulation

    def bval(y: np.ndarray) -> np.ndarray:
        return 1.0 + delta * s(y)

    def ev(y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        r = np.sum(xi ** 2, axis=-1)
        g = (1.0 + r) / (1.0 + bval(y) * r)
        return g[..., None] * xi

    def jac(y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        r = np.sum(xi ** 2, axis=-1)
        b = bval(y)
        den = 1.0 + b * r
        g = (1.0 + r) / den
        gr = (1.0 - b) / den ** 2
        out = np.zeros(xi.shape[:-1] + (2, 2))
        out[..., 0, 0] = g
        out[..., 1, 1] = g
        out += 2.0 * gr[..., None, None] * xi[..., :, None] * xi[..., None, :]
        return out

    lo, hi = paper_example_eigen_range(delta, radius)
    # y-derivative of A is (dg/db) s'(y) xi; crude but safe constant
    mu2 = float(4.0 * np.pi * abs(delta) * (1.0 + radius ** 2))
    return VectorField(
        tag=f"paper_example(delta={delta})",
        eval_fn=ev,
        jac_fn=jac,
        mu0=lo,
        mu1=hi,
        mu2=mu2,
        tau=1.0,
        audit_radius=radius,
    )


@dataclasses.dataclass
class AuditReport:
    """Empirical structure constants over sampled pairs and a Jacobian scan."""

    tag: str
    samples: int
    seed: int
    radius: float
    mu0_pairs: float
    mu1_pairs: float
    grid_min_eig: float
    grid_max_norm: float
    mu2_emp: float
    zero_defect: float
    periodicity_defect: float
    jacobian_fd_defect: float
    passed: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _sample_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def audit_structure(
    field: VectorField,
    samples: int = 10_000,
    seed: int = 0,
    radius: float = 4.0,
) -> AuditReport:
    """Empirically audit monotonicity, Lipschitz, Hoelder and zero conditions.

    Pair quotients use random (y, xi, xi') with half the partners taken
    infinitesimally close (the sharp regime); the Jacobian eigenvalue scan
    over a (y, xi) grid gives the empirical mu0/mu1 envelope.  Raises
    AuditFailed when the empirical monotonicity constant is not positive.
    """
    rng = np.random.default_rng(seed)
    y = rng.uniform(-0.5, 0.5, size=(samples, 2))
    xi = _sample_ball(rng, samples, radius)
    far = _sample_ball(rng, samples, radius)
    step = 1e-4 * radius * _sample_ball(rng, samples, 1.0)
    near = np.clip(xi + step, -radius, radius)
    xi_p = np.where((np.arange(samples) % 2 == 0)[:, None], far, near)

    dxi = xi - xi_p
    keep = np.linalg.norm(dxi, axis=1) > 1e-12 * radius
    da = field(y[keep], xi[keep]) - field(y[keep], xi_p[keep])
    nd2 = np.sum(dxi[keep] ** 2, axis=1)
    mono = np.einsum("md,md->m", da, dxi[keep]) / nd2
    lip = np.linalg.norm(da, axis=1) / np.sqrt(nd2)
    mu0_pairs = float(mono.min())
    mu1_pairs = float(lip.max())

    # dense Jacobian scan: symmetrized eigenvalues bound every pair quotient
    gy = np.linspace(-0.5, 0.5, 21)
    gr = np.linspace(0.0, radius, 33)
    gt = np.linspace(0.0, 2 * np.pi, 17, endpoint=False)
    xs = np.stack(
        [np.outer(gr, np.cos(gt)).ravel(), np.outer(gr, np.sin(gt)).ravel()],
        axis=-1,
    )
    ys_c = np.stack(np.meshgrid(gy, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    Y = np.repeat(ys_c, len(xs), axis=0)
    X = np.tile(xs, (len(ys_c), 1))
    J = field.jacobian(Y, X)
    Js = 0.5 * (J + np.swapaxes(J, -1, -2))
    tr = Js[..., 0, 0] + Js[..., 1, 1]
    det = Js[..., 0, 0] * Js[..., 1, 1] - Js[..., 0, 1] * Js[..., 1, 0]
    disc = np.sqrt(np.maximum(tr ** 2 / 4.0 - det, 0.0))
    eig_lo = tr / 2.0 - disc
    eig_hi = tr / 2.0 + disc
    grid_min_eig = float(eig_lo.min())
    grid_max_norm = float(np.maximum(np.abs(eig_hi), np.abs(eig_lo)).max())

    # Hoelder in y at fixed xi
    y2 = rng.uniform(-0.5, 0.5, size=(samples // 4, 2))
    y3 = rng.uniform(-0.5, 0.5, size=(samples // 4, 2))
    xh = _sample_ball(rng, samples // 4, radius)
    nz = np.linalg.norm(xh, axis=1) > 1e-6 * radius
    dy = np.linalg.norm(y2[nz] - y3[nz], axis=1)
    ok = dy > 1e-9
    dA = np.linalg.norm(field(y2[nz][ok], xh[nz][ok]) - field(y3[nz][ok], xh[nz][ok]), axis=1)
    quot = dA / (dy[ok] ** field.tau * np.linalg.norm(xh[nz][ok], axis=1))
    mu2_emp = float(quot.max()) if len(quot) else 0.0

    # A(., 0) = 0 and periodicity spot checks
    nspot = min(256, samples)
    zero_defect = float(
        np.abs(field(y[:nspot], np.zeros((nspot, 2)))).max()
    )
    shift = rng.integers(-2, 3, size=(nspot, 2)).astype(float)
    per = field(y[:nspot] + shift, xi[:nspot]) - field(y[:nspot], xi[:nspot])
    periodicity_defect = float(np.abs(per).max())

    # finite-difference Jacobian consistency
    hfd = 1e-6 * max(1.0, radius)
    base = field(y[:512], xi[:512])
    fd_err = 0.0
    Jc = field.jacobian(y[:512], xi[:512])
    for d in range(2):
        e = np.zeros(2)
        e[d] = hfd
        col = (field(y[:512], xi[:512] + e) - base) / hfd
        fd_err = max(fd_err, float(np.abs(col - Jc[..., :, d]).max()))
    jac_scale = max(1.0, float(np.abs(Jc).max()))

    mu0_emp = min(mu0_pairs, grid_min_eig)
    passed = (
        mu0_emp > 0.0
        and zero_defect <= 1e-12 * max(1.0, radius)
        and periodicity_defect <= 1e-10 * max(1.0, grid_max_norm * radius)
        and fd_err <= 1e-4 * jac_scale
    )
    report = AuditReport(
        tag=field.tag,
        samples=samples,
        seed=seed,
        radius=radius,
        mu0_pairs=mu0_pairs,
        mu1_pairs=mu1_pairs,
        grid_min_eig=grid_min_eig,
        grid_max_norm=grid_max_norm,
        mu2_emp=mu2_emp,
        zero_defect=zero_defect,
        periodicity_defect=periodicity_defect,
        jacobian_fd_defect=fd_err,
        passed=passed,
    )
    if mu0_emp <= 0.0:
        raise AuditFailed(
            f"{field.tag}: empirical monotonicity constant {mu0_emp:.3e} <= 0 "
            f"on the |xi| <= {radius} ball"
        )
    return report
