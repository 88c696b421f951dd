"""
Espacios de distancia diferenciables D^n = (R^n, rho).

Este módulo define:
1. El contrato DistanceField (rho, su gradiente y su hessiano en el segundo argumento)
2. Los espacios de ejemplo incluidos (euclídeo, norma p, transformada métrica,
   carta del hiperboloide)
3. La comprobación Monte Carlo de los axiomas de distancia (identidad,
   simetría y desigualdad triangular)

Las derivadas que no tienen fórmula analítica se aproximan con diferencias
centrales.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Union

import numpy as np

from errors import DimensionError, InvalidFieldError, NondifferentiablePointError

logger = logging.getLogger(__name__)

# Pasos relativos de las diferencias finitas (se escalan por max(|b - a|, 1))
H_REL_GRAD = 1e-5
H_REL_HESS = 1e-4

# Rejilla usada para validar las transformadas métricas
TRANSFORM_CHECK_GRID = np.concatenate([np.linspace(0.0, 1.0, 201), np.linspace(1.0, 100.0, 397)[1:]])

Point = np.ndarray
VectorFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def as_point(coords: Union[Sequence[float], np.ndarray], dim: Optional[int] = None) -> Point:
    """
    Convierte unas coordenadas en un punto de R^n validado

    Args:
        coords: Coordenadas del punto
        dim (Optional[int]): Dimensión esperada, o None para aceptar cualquier n >= 2

    Returns:
        np.ndarray: Vector de floats de longitud n
    """
    point = np.asarray(coords, dtype=float)
    if point.ndim != 1 or point.shape[0] < 2:
        raise DimensionError(f"Un punto debe ser un vector de longitud n >= 2, no {point.shape}",
                             shape=point.shape)
    if dim is not None and point.shape[0] != dim:
        raise DimensionError(f"El punto tiene dimensión {point.shape[0]} pero el espacio tiene {dim}",
                             point=point, dim=dim)
    if not np.all(np.isfinite(point)):
        raise DimensionError("El punto contiene coordenadas no finitas", point=point)
    return point


@dataclass(frozen=True)
class TangentVector:
    """Vector tangente y en T_pR^n (un punto base y una dirección)"""

    base: Point
    dir: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.dir))

    def unit(self) -> "TangentVector":
        length = self.norm()
        if length == 0.0:
            raise ValueError("El vector tangente es nulo y no define una dirección")
        return TangentVector(self.base, self.dir / length)


@dataclass(frozen=True)
class DistanceField:
    """
    Función de distancia rho junto con sus derivadas en el segundo argumento.

    rho(a, b) debe aceptar arrays con ejes iniciales extra cuando vectorized es
    True (la última dimensión son las coordenadas). grad y hess son opcionales:
    si faltan se usan diferencias centrales.
    """

    dim: int
    rho: VectorFn
    grad: Optional[VectorFn] = None
    hess: Optional[VectorFn] = None
    name: str = "custom"
    vectorized: bool = False
    descriptor: Dict[str, Any] = field(default_factory=dict)

    @property
    def has_analytic_derivatives(self) -> bool:
        return self.grad is not None

    def eval(self, a, b) -> float:
        return eval_distance(self, a, b)

    def grad2(self, a, b) -> np.ndarray:
        return grad2_distance(self, a, b)

    def hess2(self, a, b) -> np.ndarray:
        return hess2_distance(self, a, b)

    def pairwise(self, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """Distancias rho(starts[k], ends[k]) fila a fila"""
        starts = np.asarray(starts, dtype=float)
        ends = np.asarray(ends, dtype=float)
        if self.vectorized:
            return np.asarray(self.rho(starts, ends), dtype=float)
        return np.array([eval_distance(self, p, q) for p, q in zip(starts, ends)])


def eval_distance(field: DistanceField, a, b) -> float:
    """
    Evalúa rho(a, b)

    Args:
        field (DistanceField): Espacio de distancia
        a: Primer punto
        b: Segundo punto

    Returns:
        float: rho(a, b) >= 0, exactamente 0 si a y b coinciden bit a bit
    """
    a = as_point(a, field.dim)
    b = as_point(b, field.dim)
    if np.array_equal(a, b):
        return 0.0
    value = float(field.rho(a, b))
    if not np.isfinite(value) or value < 0.0:
        raise InvalidFieldError(f"El campo '{field.name}' devolvió rho = {value}", a=a, b=b, value=value)
    return value


def fd_step(a: Point, b: Point, h_rel: float) -> float:
    return max(float(np.linalg.norm(b - a)), 1.0) * h_rel


def central_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Gradiente por diferencias centrales de una función escalar"""
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (fun(x + step) - fun(x - step)) / (2.0 * h)
    return grad


def central_hessian(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Hessiano por diferencias centrales de segundo orden de una función escalar"""
    n = x.shape[0]
    hess = np.empty((n, n))
    f0 = fun(x)
    basis = np.eye(n) * h
    for i in range(n):
        hess[i, i] = (fun(x + basis[i]) - 2.0 * f0 + fun(x - basis[i])) / (h * h)
        for j in range(i + 1, n):
            value = (fun(x + basis[i] + basis[j]) - fun(x + basis[i] - basis[j])
                     - fun(x - basis[i] + basis[j]) + fun(x - basis[i] - basis[j])) / (4.0 * h * h)
            hess[i, j] = hess[j, i] = value
    return hess


def _check_off_diagonal(a: Point, b: Point) -> None:
    if np.array_equal(a, b):
        # rho solo es C^0 sobre la diagonal
        raise NondifferentiablePointError("rho no es diferenciable en a = b", a=a, b=b)


def grad2_distance(field: DistanceField, a, b) -> np.ndarray:
    """
    Gradiente de p -> rho(a, p) en p = b

    Args:
        field (DistanceField): Espacio de distancia
        a: Centro
        b: Punto donde se deriva, distinto de a

    Returns:
        np.ndarray: Gradiente (vector de longitud n)
    """
    a = as_point(a, field.dim)
    b = as_point(b, field.dim)
    _check_off_diagonal(a, b)
    if field.has_analytic_derivatives:
        return np.asarray(field.grad(a, b), dtype=float)
    return central_gradient(lambda p: float(field.rho(a, p)), b, fd_step(a, b, H_REL_GRAD))


def hess2_distance(field: DistanceField, a, b) -> np.ndarray:
    """
    Hessiano simétrico de p -> rho(a, p) en p = b

    Si hay gradiente analítico se deriva este por diferencias centrales; si no,
    se usan segundas diferencias de rho.
    """
    a = as_point(a, field.dim)
    b = as_point(b, field.dim)
    _check_off_diagonal(a, b)
    if field.hess is not None:
        hess = np.asarray(field.hess(a, b), dtype=float)
    elif field.has_analytic_derivatives:
        h = fd_step(a, b, H_REL_HESS)
        hess = np.empty((field.dim, field.dim))
        for j in range(field.dim):
            step = np.zeros(field.dim)
            step[j] = h
            hess[:, j] = (field.grad(a, b + step) - field.grad(a, b - step)) / (2.0 * h)
    else:
        hess = central_hessian(lambda p: float(field.rho(a, p)), b, fd_step(a, b, H_REL_HESS))
    return 0.5 * (hess + hess.T)


# ---------------------------------------------------------------------------
# Espacios incluidos
# ---------------------------------------------------------------------------

def euclidean(dim: int) -> DistanceField:
    """Espacio euclídeo E^n"""
    _check_dim(dim)

    def rho(a, b):
        return np.linalg.norm(b - a, axis=-1)

    def grad(a, b):
        d = b - a
        return d / np.linalg.norm(d)

    def hess(a, b):
        d = b - a
        s = np.linalg.norm(d)
        u = d / s
        return (np.eye(dim) - np.outer(u, u)) / s

    return DistanceField(dim, rho, grad, hess, name=f"euclidean({dim})", vectorized=True,
                         descriptor={"kind": "euclidean", "dim": dim})


def _pnorm(d: np.ndarray, p: float) -> np.ndarray:
    # escalado por el máximo para evitar desbordamientos con p grande
    m = np.max(np.abs(d), axis=-1)
    safe = np.where(m > 0.0, m, 1.0)
    return m * np.sum((np.abs(d) / safe[..., None]) ** p, axis=-1) ** (1.0 / p)


def minkowski_pnorm(dim: int, p: float) -> DistanceField:
    """Espacio de Minkowski con la norma p, 1 < p < infinito"""
    _check_dim(dim)
    if not np.isfinite(p) or p <= 1.0:
        raise ValueError(f"p = {p}: las esferas no son estrictamente convexas (se necesita 1 < p < inf)")

    def rho(a, b):
        return _pnorm(b - a, p)

    def grad(a, b):
        d = b - a
        return np.sign(d) * (np.abs(d) / _pnorm(d, p)) ** (p - 1.0)

    def hess(a, b):
        d = b - a
        s = _pnorm(d, p)
        g = np.sign(d) * (np.abs(d) / s) ** (p - 1.0)
        return (p - 1.0) / s * (np.diag((np.abs(d) / s) ** (p - 2.0)) - np.outer(g, g))

    # con p < 2 el hessiano analítico explota en las componentes nulas
    return DistanceField(dim, rho, grad, hess if p >= 2.0 else None, name=f"minkowski_pnorm({dim},{p:g})",
                         vectorized=True, descriptor={"kind": "minkowski_pnorm", "dim": dim, "p": p})


@dataclass(frozen=True)
class Transform:
    """Función f cóncava y creciente con f(0) = 0, y sus dos primeras derivadas"""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]
    smooth_at_zero: bool = True
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}(" + ",".join(f"{v:g}" for v in self.params.values()) + ")"


def fraction_transform() -> Transform:
    return Transform("fraction", lambda s: s / (1.0 + s), lambda s: 1.0 / (1.0 + s) ** 2,
                     lambda s: -2.0 / (1.0 + s) ** 3)


def log1p_transform() -> Transform:
    return Transform("log1p", np.log1p, lambda s: 1.0 / (1.0 + s), lambda s: -1.0 / (1.0 + s) ** 2)


def arctan_transform() -> Transform:
    return Transform("arctan", np.arctan, lambda s: 1.0 / (1.0 + s * s),
                     lambda s: -2.0 * s / (1.0 + s * s) ** 2)


def snowflake_transform(exponent: float) -> Transform:
    """f(s) = s^alpha: métrica válida, pero no diferenciable en s = 0"""
    if not 0.0 < exponent < 1.0:
        raise ValueError(f"El exponente de snowflake debe estar en (0, 1), no {exponent}")
    return Transform("snowflake", lambda s: s ** exponent,
                     lambda s: exponent * s ** (exponent - 1.0),
                     lambda s: exponent * (exponent - 1.0) * s ** (exponent - 2.0),
                     smooth_at_zero=False, params={"exponent": exponent})


TRANSFORMS: Dict[str, Callable[..., Transform]] = {
    "fraction": fraction_transform,
    "log1p": log1p_transform,
    "arctan": arctan_transform,
    "snowflake": snowflake_transform,
}


def check_transform(transform: Transform) -> None:
    """
    Comprueba sobre una rejilla que f(0) = 0, que f es creciente y que es cóncava

    Raises:
        ValueError: Si alguna de las tres condiciones falla
    """
    s = TRANSFORM_CHECK_GRID
    with np.errstate(divide="ignore", invalid="ignore"):
        values = transform.f(s)
        slopes = transform.df(s[1:])
        curvatures = transform.d2f(s[1:])
    if abs(float(values[0])) > 1e-15:
        raise ValueError(f"La transformada '{transform.label}' no cumple f(0) = 0")
    if np.any(np.diff(values) <= 0.0) or np.any(slopes <= 0.0):
        raise ValueError(f"La transformada '{transform.label}' no es creciente (f not increasing)")
    if np.any(curvatures > 1e-12):
        raise ValueError(f"La transformada '{transform.label}' no es cóncava")


def metric_transform(base: DistanceField, transform: Transform) -> DistanceField:
    """Distancia f o rho_base con f cóncava, creciente y f(0) = 0"""
    check_transform(transform)

    def rho(a, b):
        return transform.f(base.rho(a, b))

    grad = hess = None
    if base.grad is not None:
        def grad(a, b):
            return transform.df(base.rho(a, b)) * base.grad(a, b)

        def hess(a, b):
            s = base.rho(a, b)
            g = base.grad(a, b)
            return transform.d2f(s) * np.outer(g, g) + transform.df(s) * hess2_distance(base, a, b)

    descriptor = {"kind": "metric_transform", "base": base.descriptor, "transform": transform.name,
                  **transform.params}
    return DistanceField(base.dim, rho, grad, hess, name=f"metric_transform({base.name},{transform.label})",
                         vectorized=base.vectorized, descriptor=descriptor)


def _hyperbolic_parts(a: np.ndarray, b: np.ndarray):
    d = b - a
    big_a = np.sqrt(1.0 + np.sum(a * a, axis=-1))
    big_b = np.sqrt(1.0 + np.sum(b * b, axis=-1))
    # B - A escrito sin cancelación
    b_minus_a = np.sum(d * (a + b), axis=-1) / (big_a + big_b)
    # q = 2 (z - 1) con z = A B - <a, b>
    q = np.maximum(np.sum(d * d, axis=-1) - b_minus_a ** 2, 0.0)
    return d, big_a, big_b, b_minus_a, q


def hyperbolic_chart(dim: int) -> DistanceField:
    """
    Carta del modelo del hiperboloide sobre R^n:
    rho(a, b) = arcosh(sqrt(1 + |a|^2) sqrt(1 + |b|^2) - <a, b>)

    Se evalúa como 2 arsinh(sqrt(q) / 2) con q = 2 (z - 1), que es estable
    cuando a y b están cerca.
    """
    _check_dim(dim)

    def rho(a, b):
        q = _hyperbolic_parts(a, b)[4]
        return 2.0 * np.arcsinh(np.sqrt(q) / 2.0)

    def _z_derivatives(a, b):
        d, big_a, big_b, b_minus_a, q = _hyperbolic_parts(a, b)
        z_b = (big_a * d - b_minus_a * a) / big_b
        s = np.sqrt(q * (1.0 + q / 4.0))  # sqrt(z^2 - 1)
        return big_a, big_b, q, z_b, s

    def grad(a, b):
        _, _, _, z_b, s = _z_derivatives(a, b)
        return z_b / s

    def hess(a, b):
        big_a, big_b, q, z_b, s = _z_derivatives(a, b)
        z = 1.0 + q / 2.0
        z_bb = big_a * (np.eye(dim) / big_b - np.outer(b, b) / big_b ** 3)
        return z_bb / s - z / s ** 3 * np.outer(z_b, z_b)

    return DistanceField(dim, rho, grad, hess, name=f"hyperbolic_chart({dim})", vectorized=True,
                         descriptor={"kind": "hyperbolic_chart", "dim": dim})


SPACE_KINDS = ("euclidean", "minkowski_pnorm", "metric_transform", "hyperbolic_chart")


def builtin_space(spec: Dict[str, Any]) -> DistanceField:
    """
    Construye un espacio incluido a partir de su descriptor

    Args:
        spec (Dict[str, Any]): Descriptor, por ejemplo {"kind": "minkowski_pnorm", "dim": 2, "p": 4}
            o {"kind": "metric_transform", "base": {...}, "transform": "fraction"}

    Returns:
        DistanceField: El espacio construido
    """
    kind = spec.get("kind")
    if kind == "euclidean":
        return euclidean(int(spec.get("dim", 2)))
    if kind == "minkowski_pnorm":
        return minkowski_pnorm(int(spec.get("dim", 2)), float(spec["p"]))
    if kind == "hyperbolic_chart":
        return hyperbolic_chart(int(spec.get("dim", 2)))
    if kind == "metric_transform":
        base = builtin_space(spec.get("base", {"kind": "euclidean", "dim": 2}))
        name = spec.get("transform", "fraction")
        if name not in TRANSFORMS:
            raise ValueError(f"Transformada desconocida '{name}'. Disponibles: {sorted(TRANSFORMS)}")
        transform = TRANSFORMS[name](spec["exponent"]) if name == "snowflake" else TRANSFORMS[name]()
        return metric_transform(base, transform)
    raise ValueError(f"Espacio desconocido '{kind}'. Disponibles: {list(SPACE_KINDS)}")


def _check_dim(dim: int) -> None:
    if dim < 2:
        raise DimensionError(f"La dimensión debe ser n >= 2, no {dim}", dim=dim)


# ---------------------------------------------------------------------------
# Axiomas
# ---------------------------------------------------------------------------

@dataclass
class AxiomReport:
    space: str
    n_samples: int
    worst_identity: float
    worst_symmetry: float
    worst_triangle: float
    tol: float
    passes: Dict[str, bool]

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "space": self.space,
            "n_samples": self.n_samples,
            "worst_identity": self.worst_identity,
            "worst_symmetry": self.worst_symmetry,
            "worst_triangle": self.worst_triangle,
            "tol": self.tol,
            "pass": dict(self.passes),
        }


def axiom_check(field: DistanceField, low: float, high: float, count: int,
                tol: float = 1e-9, seed: int = 0) -> AxiomReport:
    """
    Comprobación Monte Carlo de los axiomas de distancia sobre la caja [low, high]^n

    Solo puede falsar los axiomas: un informe que pasa no certifica nada.

    Args:
        field (DistanceField): Espacio a comprobar
        low (float): Extremo inferior de la caja
        high (float): Extremo superior de la caja
        count (int): Número de ternas (a, b, c) muestreadas, al menos 3
        tol (float): Tolerancia de cada axioma
        seed (int): Semilla del generador

    Returns:
        AxiomReport: Peores valores encontrados y si cada axioma pasa
    """
    if count < 3:
        raise ValueError("axiom_check necesita al menos 3 muestras")
    if not high > low:
        raise ValueError("La caja de muestreo está vacía")
    rng = np.random.default_rng(seed)
    samples = rng.uniform(low, high, size=(count, 3, field.dim))

    worst_identity = 0.0
    worst_symmetry = 0.0
    worst_triangle = np.inf
    for a, b, c in samples:
        worst_identity = max(worst_identity, abs(float(field.rho(a, a))))
        ab = float(field.rho(a, b))
        worst_symmetry = max(worst_symmetry, abs(ab - float(field.rho(b, a))))
        worst_triangle = min(worst_triangle, float(field.rho(a, c)) + float(field.rho(c, b)) - ab)

    passes = {
        "identity": bool(worst_identity <= tol),
        "symmetry": bool(worst_symmetry <= tol),
        "triangle": bool(worst_triangle >= -tol),
    }
    logger.info("Axiomas de %s sobre %d ternas: %s", field.name, count, passes)
    return AxiomReport(field.name, count, worst_identity, worst_symmetry, float(worst_triangle), tol, passes)
