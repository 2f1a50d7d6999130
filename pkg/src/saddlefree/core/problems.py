import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, List, Literal, Mapping, Optional

import numpy as np
import scipy.sparse as sparse
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.sparse.linalg import LinearOperator, eigsh

from saddlefree.core.oracles import (
    NonsmoothOracle,
    QuadraticOracle,
    SmoothOracle,
    Vector,
)
from saddlefree.core.prox import ProxOperator, ProxSpec

ProblemKind = Literal["toy", "sparse_pca", "phase_retrieval", "box_qp"]
ToyVariant = Literal["quadratic_box", "l1_box"]

REFERENCE_RESIDUAL_TOL = 1e-12
DENSE_GRAM_LIMIT = 64
X0_STREAM = 1
_MASK_BLOCK = 1 << 20


class ProblemDescriptor(BaseModel):
    """
    Everything needed to regenerate a problem instance; raw data is never stored.

    :param kind: Problem family.
    :param variant: Toy landscape (toy problems only).
    :param n: Variable dimension.
    :param m: Number of phase-retrieval measurements.
    :param kappa: Sparse-PCA ℓ1 weight.
    :param density: Fraction of nonzeros of the sparse-PCA data matrix.
    :param seed: Generator seed.
    """

    model_config = ConfigDict(frozen=True)

    kind: ProblemKind
    variant: Optional[ToyVariant] = None
    n: Optional[int] = None
    m: Optional[int] = None
    kappa: Optional[float] = None
    density: Optional[float] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def check_sizes(self) -> "ProblemDescriptor":
        if self.kind == "toy" and self.variant is None:
            raise ValueError("Toy problems need a variant.")
        if self.kind in ("sparse_pca", "phase_retrieval", "box_qp"):
            if self.n is None or self.n < 2:
                raise ValueError("n must be at least 2.")
        if self.kind == "phase_retrieval" and (self.m is None or self.m < 1):
            raise ValueError("m must be at least 1.")
        if self.kind == "sparse_pca":
            if self.density is None or not 0.0 < self.density <= 1.0:
                raise ValueError("density must lie in (0, 1].")
            if self.kappa is None or self.kappa < 0:
                raise ValueError("kappa must be nonnegative.")
        return self

    def config_key(self) -> dict[str, Any]:
        """The descriptor without its seed: runs sharing it form one experiment."""
        return self.model_dump(exclude={"seed"})

    def with_seed(self, seed: int) -> "ProblemDescriptor":
        return self.model_copy(update={"seed": seed})


class ProblemReference(BaseModel):
    """Known points of interest of an instance."""

    minimizers: List[List[float]] = []
    saddles: List[List[float]] = []
    maximizers: List[List[float]] = []
    phi_star: Optional[float] = None

    def fixed_points(self) -> List[List[float]]:
        return self.minimizers + self.saddles + self.maximizers


@dataclass(frozen=True)
class ProblemInstance:
    """
    A composite problem φ = f + g with its oracles.

    Reference points are checked to be fixed points of the forward-backward map
    at construction.
    """

    name: str
    descriptor: ProblemDescriptor
    smooth: SmoothOracle
    nonsmooth: NonsmoothOracle
    reference: Optional[ProblemReference] = field(default=None)

    def __post_init__(self) -> None:
        if self.smooth.dim != self.nonsmooth.dim:
            raise ValueError("Smooth and nonsmooth oracle dimensions differ.")
        if self.reference is None:
            return
        hint = self.smooth.lipschitz_hint
        gamma = 0.9 / hint if hint else 1e-2
        for point in self.reference.fixed_points():
            x = np.asarray(point, dtype=float)
            xbar = self.nonsmooth.prox(x - gamma * self.smooth.grad(x), gamma)
            if np.max(np.abs(x - xbar)) / gamma > REFERENCE_RESIDUAL_TOL:
                raise ValueError(f"Reference point {point} is not a fixed point.")

    @property
    def dim(self) -> int:
        return self.smooth.dim

    def phi(self, x: Vector) -> float:
        """φ(x) through the uncounted oracles."""
        return self.smooth.value(x) + self.nonsmooth.value(x)


class SparsePcaOracle(SmoothOracle):
    """f(x) = −½‖Ax‖², so ∇f(x) = −Aᵀ(Ax) and ∇²f = −AᵀA; Σ = AᵀA is never formed."""

    matvec_cost: ClassVar[Mapping[str, int]] = {"value": 1, "grad": 2, "hvp": 2}

    def __init__(self, data: sparse.csr_matrix, lipschitz_hint: float) -> None:
        super().__init__(data.shape[1], lipschitz_hint)
        self.data = data
        self.data_t = data.T.tocsr()

    def value(self, x: Vector) -> float:
        ax = self.data @ x
        return -0.5 * float(ax @ ax)

    def grad(self, x: Vector) -> Vector:
        return -(self.data_t @ (self.data @ x))

    def hvp(self, x: Vector, v: Vector) -> Vector:
        return -(self.data_t @ (self.data @ v))


class PhaseRetrievalOracle(SmoothOracle):
    """
    f(x) = 1/(2m) Σᵢ (yᵢ² − (aᵢᵀx)²)² for real Gaussian measurements.

    ∇f(x) = (2/m) Σᵢ ((aᵢᵀx)² − yᵢ²)(aᵢᵀx) aᵢ and
    ∇²f(x)v = (2/m) Σᵢ (3(aᵢᵀx)² − yᵢ²)(aᵢᵀv) aᵢ. There is no global Lipschitz
    constant, so no hint is given.
    """

    matvec_cost: ClassVar[Mapping[str, int]] = {"value": 1, "grad": 2, "hvp": 3}

    def __init__(self, measurements: Vector, observed_sq: Vector) -> None:
        super().__init__(measurements.shape[1], None)
        self.measurements = measurements
        self.observed_sq = observed_sq
        self.m = measurements.shape[0]

    def value(self, x: Vector) -> float:
        u = self.measurements @ x
        misfit = self.observed_sq - u**2
        return float(misfit @ misfit) / (2.0 * self.m)

    def grad(self, x: Vector) -> Vector:
        u = self.measurements @ x
        weights = (u**2 - self.observed_sq) * u
        return (2.0 / self.m) * (self.measurements.T @ weights)

    def hvp(self, x: Vector, v: Vector) -> Vector:
        u = self.measurements @ x
        weights = (3.0 * u**2 - self.observed_sq) * (self.measurements @ v)
        return (2.0 / self.m) * (self.measurements.T @ weights)


def toy_box(variant: ToyVariant) -> ProblemInstance:
    """
    Two-dimensional landscapes φ(x, y) = −x² − y² (+ |x|) + δ_[−1,1]²(x, y).

    ``quadratic_box`` has minimizers (±1, ±1), strict saddles (±1, 0), (0, ±1)
    and the maximizer (0, 0). ``l1_box`` adds |x|: minimizers (±1, ±1), (0, ±1),
    strict saddles (0, 0), (±1, 0) and maximizers (±0.5, 0).
    """
    smooth = QuadraticOracle(-2.0 * np.eye(2))
    if variant == "quadratic_box":
        spec = ProxSpec.box(-1.0, 1.0)
        reference = ProblemReference(
            minimizers=[[1, 1], [1, -1], [-1, 1], [-1, -1]],
            saddles=[[1, 0], [-1, 0], [0, 1], [0, -1]],
            maximizers=[[0, 0]],
        )
    else:
        spec = ProxSpec.l1_box([1.0, 0.0], -1.0, 1.0)
        reference = ProblemReference(
            minimizers=[[1, 1], [1, -1], [-1, 1], [-1, -1], [0, 1], [0, -1]],
            saddles=[[0, 0], [1, 0], [-1, 0]],
            maximizers=[[0.5, 0], [-0.5, 0]],
        )
    return ProblemInstance(
        name=f"toy-{variant}",
        descriptor=ProblemDescriptor(kind="toy", variant=variant),
        smooth=smooth,
        nonsmooth=ProxOperator(spec, 2),
        reference=reference,
    )


def _bernoulli_sparse(
    rows: int, cols: int, density: float, rng: np.random.Generator
) -> sparse.csr_matrix:
    # iid Bernoulli(density) mask with standard-normal nonzeros, built in row blocks
    block = max(1, _MASK_BLOCK // cols)
    row_idx, col_idx = [], []
    for start in range(0, rows, block):
        stop = min(rows, start + block)
        r, c = np.nonzero(rng.random((stop - start, cols)) < density)
        row_idx.append(r + start)
        col_idx.append(c)
    r_all = np.concatenate(row_idx)
    c_all = np.concatenate(col_idx)
    values = rng.standard_normal(r_all.shape[0])
    return sparse.csr_matrix((values, (r_all, c_all)), shape=(rows, cols))


def _gram_lambda_max(data: sparse.csr_matrix, rng: np.random.Generator) -> float:
    n = data.shape[1]
    if n <= DENSE_GRAM_LIMIT:
        gram = (data.T @ data).toarray()
        return float(np.linalg.eigvalsh(gram)[-1])
    data_t = data.T.tocsr()
    gram_op = LinearOperator(
        (n, n), matvec=lambda v: data_t @ (data @ v), dtype=float
    )
    evals = eigsh(gram_op, k=1, which="LA", v0=rng.standard_normal(n), tol=1e-10)[0]
    return float(evals[0])


def sparse_pca(
    n: int, kappa: float = 1e-2, density: float = 0.1, seed: int = 0
) -> ProblemInstance:
    """
    Sparse PCA: −½xᵀΣx + κ‖x‖₁ + δ_B(0;1)(x) with Σ = AᵀA, A ∈ R^{20n×n} sparse.

    The Lipschitz hint is λ_max(Σ), computed once at generation.
    """
    descriptor = ProblemDescriptor(
        kind="sparse_pca", n=n, kappa=kappa, density=density, seed=seed
    )
    rng = np.random.default_rng(seed)
    data = _bernoulli_sparse(20 * n, n, density, rng)
    smooth = SparsePcaOracle(data, _gram_lambda_max(data, rng))
    return ProblemInstance(
        name=f"sparse-pca-n{n}",
        descriptor=descriptor,
        smooth=smooth,
        nonsmooth=ProxOperator(ProxSpec.l1_ball(kappa, 1.0), n),
    )


def phase_retrieval(n: int, m: int, seed: int = 0) -> ProblemInstance:
    """
    Real phase retrieval 1/(2m) Σ (yᵢ² − (aᵢᵀx)²)² + δ_B(0;1)(x), noiseless.

    x⋆ is a normalized Gaussian vector; φ⋆ = 0 is attained at ±x⋆.
    """
    descriptor = ProblemDescriptor(kind="phase_retrieval", n=n, m=m, seed=seed)
    rng = np.random.default_rng(seed)
    measurements = rng.standard_normal((m, n))
    x_star = rng.standard_normal(n)
    x_star /= np.linalg.norm(x_star)
    observed_sq = (measurements @ x_star) ** 2
    return ProblemInstance(
        name=f"phase-retrieval-n{n}-m{m}",
        descriptor=descriptor,
        smooth=PhaseRetrievalOracle(measurements, observed_sq),
        nonsmooth=ProxOperator(ProxSpec.ball(1.0), n),
        reference=ProblemReference(
            minimizers=[x_star.tolist(), (-x_star).tolist()], phi_star=0.0
        ),
    )


def box_qp(n: int, seed: int = 0) -> ProblemInstance:
    """Strongly convex quadratic on the box [−1, 1]ⁿ, used for baseline comparisons."""
    descriptor = ProblemDescriptor(kind="box_qp", n=n, seed=seed)
    rng = np.random.default_rng(seed)
    factor = rng.standard_normal((n, n))
    hessian = factor.T @ factor / n + 0.1 * np.eye(n)
    linear = 2.0 * rng.standard_normal(n)
    return ProblemInstance(
        name=f"box-qp-n{n}",
        descriptor=descriptor,
        smooth=QuadraticOracle(hessian, linear),
        nonsmooth=ProxOperator(ProxSpec.box(-1.0, 1.0), n),
    )


def build_problem(descriptor: ProblemDescriptor) -> ProblemInstance:
    """Regenerate the instance a descriptor stands for."""
    seed = descriptor.seed if descriptor.seed is not None else 0
    if descriptor.kind == "toy":
        assert descriptor.variant is not None
        return toy_box(descriptor.variant)
    assert descriptor.n is not None
    if descriptor.kind == "sparse_pca":
        assert descriptor.kappa is not None and descriptor.density is not None
        return sparse_pca(descriptor.n, descriptor.kappa, descriptor.density, seed)
    if descriptor.kind == "phase_retrieval":
        assert descriptor.m is not None
        return phase_retrieval(descriptor.n, descriptor.m, seed)
    return box_qp(descriptor.n, seed)


def sample_unit_ball(dim: int, seed: int) -> Vector:
    """Uniform sample from the unit ball, on its own stream of ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, X0_STREAM]))
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return direction * rng.random() ** (1.0 / dim)


def is_near_any(x: Vector, points: List[List[float]], tol: float) -> bool:
    return any(
        math.dist(list(map(float, x)), list(map(float, p))) <= tol for p in points
    )
