"""
Puente entre la distancia rho y la métrica de Finsler débil que induce.

F(x, y) = lim_{r -> 0+} rho(x, x + r y) / r se estima con extrapolación de
Richardson sobre una escalera de radios. Con F se calculan indicatrices,
longitudes de Finsler s_F (cuadratura de Gauss-Legendre) y se comparan con
la longitud por cuerdas s_D de la propia distancia.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from distance_core import DistanceField, TangentVector, as_point, eval_distance
from errors import ExtrapolationDivergenceError
from osculation_engine import CurveTrace, trace_at
from sphere_geometry import classify_polygon

logger = logging.getLogger(__name__)

METHODS = ("ratio", "radial_derivative")
LADDER_RUNGS = 6
DIVERGENCE_TOL = 1e-4
MIN_INDICATRIX_RESOLUTION = 32
MAX_CHORDS = 10 ** 6
# umbral de crecimiento de las derivadas de rho / r a partir del cual se dan por no acotadas
D7_GROWTH_LIMIT = 10.0


def default_ladder(scale: float = 1.0, rungs: int = LADDER_RUNGS) -> Tuple[float, ...]:
    """r_k = 0.1 * 2^-k * scale para k = 0 .. rungs - 1"""
    return tuple(0.1 * scale * 2.0 ** -k for k in range(rungs))


def richardson(nodes: Sequence[float], values: Sequence[float], order: int) -> Tuple[float, float]:
    """
    Extrapolación polinómica a h = 0 con el tablero de Neville

    Como en el método de Ridders se devuelve la entrada del tablero con la
    menor estimación de error.

    Args:
        nodes (Sequence[float]): Pasos h_k decrecientes
        values (Sequence[float]): Valores g(h_k)
        order (int): Grado máximo del polinomio

    Returns:
        Tuple[float, float]: Valor extrapolado y estimación de su error
    """
    table: List[List[float]] = [[float(values[0])]]
    best, error = float(values[0]), math.inf
    for k in range(1, len(values)):
        row = [float(values[k])]
        for j in range(1, min(k, order) + 1):
            factor = nodes[k - j] / nodes[k]
            row.append(row[j - 1] + (row[j - 1] - table[k - 1][j - 1]) / (factor - 1.0))
            estimate = max(abs(row[j] - row[j - 1]), abs(row[j] - table[k - 1][j - 1]))
            if estimate <= error:
                best, error = row[j], estimate
        table.append(row)
    if not math.isfinite(error):
        error = abs(float(values[-1]) - float(values[0]))
    return best, error


@dataclass
class FinslerEvaluator:
    field: DistanceField
    r_ladder: Tuple[float, ...] = field(default_factory=default_ladder)
    order: int = 4
    method: str = "ratio"
    err_estimate_last: float = 0.0

    def __post_init__(self):
        ladder = np.asarray(self.r_ladder, dtype=float)
        if len(ladder) < 3 or np.any(ladder <= 0.0) or np.any(np.diff(ladder) >= 0.0):
            raise ValueError("r_ladder debe tener al menos 3 radios positivos estrictamente decrecientes")
        if ladder[-1] < 1e-6 * ladder[0]:
            raise ValueError("El radio más pequeño de r_ladder es demasiado pequeño frente al primero")
        if self.method not in METHODS:
            raise ValueError(f"Método desconocido '{self.method}'. Disponibles: {list(METHODS)}")
        if self.order < 1:
            raise ValueError("El orden de Richardson debe ser al menos 1")
        self.r_ladder = tuple(float(r) for r in ladder)

    def value(self, x, y) -> float:
        return extract_F(self, x, y)


def _profile(evaluator: FinslerEvaluator, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    field_ = evaluator.field
    ladder = np.asarray(evaluator.r_ladder)
    if evaluator.method == "ratio":
        return np.array([eval_distance(field_, x, x + r * u) / r for r in ladder])
    # derivada radial por diferencias centrales con h = r / 4
    return np.array([(eval_distance(field_, x, x + 1.25 * r * u) - eval_distance(field_, x, x + 0.75 * r * u))
                     / (0.5 * r) for r in ladder])


def extract_F(evaluator: FinslerEvaluator, x, y=None) -> float:
    """
    F(x, y) inducida por rho

    Args:
        evaluator (FinslerEvaluator): Campo, escalera de radios y método
        x: Punto base, o un TangentVector con base y dirección
        y: Vector tangente no nulo (se omite si x es un TangentVector)

    Returns:
        float: F(x, y) > 0. Es positivamente homogénea por construcción.
    """
    if isinstance(x, TangentVector):
        x, y = x.base, x.dir
    x = as_point(x, evaluator.field.dim)
    y = np.asarray(y, dtype=float)
    length = float(np.linalg.norm(y))
    if length == 0.0:
        raise ValueError("F(x, 0) no define una dirección: y debe ser no nulo")
    u = y / length

    values = _profile(evaluator, x, u)
    limit, error = richardson(evaluator.r_ladder, values, evaluator.order)
    evaluator.err_estimate_last = float(error)
    differences = np.abs(np.diff(values))
    growing = len(differences) >= 2 and np.all(np.diff(differences) > 0.0)
    if error > DIVERGENCE_TOL * max(1.0, abs(limit)) or (growing and differences[-1] > 1e-6 * max(1.0, abs(limit))):
        raise ExtrapolationDivergenceError(
            "La extrapolación de rho(x, x + r y) / r no converge: las derivadas de rho / r no parecen acotadas",
            x=x, y=y, values=values, error=error)
    if not limit > 0.0:
        raise ExtrapolationDivergenceError(f"F extrapolada no positiva ({limit})", x=x, y=y, values=values)
    return length * limit


def cross_validate_F(evaluator: FinslerEvaluator, x, y) -> float:
    """Diferencia relativa entre los métodos ratio y radial_derivative"""
    ratio = extract_F(replace(evaluator, method="ratio"), x, y)
    radial = extract_F(replace(evaluator, method="radial_derivative"), x, y)
    return abs(ratio - radial) / ratio


@dataclass
class IndicatrixSample:
    base: np.ndarray
    angles: np.ndarray
    points: np.ndarray
    f_values: np.ndarray
    classification: str
    min_curvature: float

    @property
    def convex(self) -> bool:
        return self.classification in ("convex", "strictly_convex")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"theta": self.angles, "y0": self.points[:, 0], "y1": self.points[:, 1],
                             "F_unit": self.f_values})


def indicatrix_sample(evaluator: FinslerEvaluator, x, resolution: int = 64) -> IndicatrixSample:
    """Polígono {y : F(x, y) = 1} con y(theta) = u(theta) / F(x, u(theta)) y su convexidad"""
    if evaluator.field.dim != 2:
        raise ValueError("indicatrix_sample solo está disponible para n = 2")
    if resolution < MIN_INDICATRIX_RESOLUTION:
        raise ValueError(f"indicatrix_sample necesita al menos {MIN_INDICATRIX_RESOLUTION} ángulos")
    x = as_point(x, 2)
    angles = 2.0 * np.pi * np.arange(resolution) / resolution
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    f_values = np.array([extract_F(evaluator, x, u) for u in directions])
    points = directions / f_values[:, None]
    classification, signed = classify_polygon(points)
    logger.info("Indicatriz en %s: %s", x, classification)
    return IndicatrixSample(x, angles, points, f_values, classification, float(np.min(signed)))


# ---------------------------------------------------------------------------
# Curvas y longitudes
# ---------------------------------------------------------------------------

@dataclass
class ParamCurve:
    """Curva t -> x(t) sobre [t0, t1]; la velocidad es opcional"""

    point: Callable[[float], np.ndarray]
    t0: float = 0.0
    t1: float = 1.0
    velocity: Optional[Callable[[float], np.ndarray]] = None
    name: str = "curve"

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self.point(t), dtype=float)

    def positions(self, ts: Sequence[float]) -> np.ndarray:
        return np.array([self.position(t) for t in ts])

    def tangent(self, t: float) -> TangentVector:
        if self.velocity is not None:
            return TangentVector(self.position(t), np.asarray(self.velocity(t), dtype=float))
        h = 1e-6 * (self.t1 - self.t0)
        lo, hi = max(t - h, self.t0), min(t + h, self.t1)
        return TangentVector(self.position(t), (self.position(hi) - self.position(lo)) / (hi - lo))

    def check_regular(self, samples: int = 65) -> None:
        for t in np.linspace(self.t0, self.t1, samples):
            if self.tangent(t).norm() <= 1e-12:
                raise ValueError(f"La curva '{self.name}' no es regular en t = {t}")

    @classmethod
    def segment(cls, start, end) -> "ParamCurve":
        start = np.asarray(start, dtype=float)
        end = np.asarray(end, dtype=float)
        return cls(lambda t: start + t * (end - start), velocity=lambda t: end - start, name="segment")

    @classmethod
    def parabola(cls, t0: float = 0.0, t1: float = 1.0) -> "ParamCurve":
        """t -> (t, t^2)"""
        return cls(lambda t: np.array([t, t * t]), t0, t1, velocity=lambda t: np.array([1.0, 2.0 * t]),
                   name="parabola")

    @classmethod
    def circle_arc(cls, center=(0.0, 0.0), radius: float = 1.0, theta0: float = 0.0,
                   theta1: float = 0.5 * np.pi) -> "ParamCurve":
        center = np.asarray(center, dtype=float)
        return cls(lambda t: center + radius * np.array([np.cos(t), np.sin(t)]), theta0, theta1,
                   velocity=lambda t: radius * np.array([-np.sin(t), np.cos(t)]), name="circle_arc")

    @classmethod
    def polyline(cls, vertices) -> "ParamCurve":
        """Interpolación lineal de los vértices con t = índice / (m - 1)"""
        vertices = np.asarray(vertices, dtype=float)
        count = len(vertices) - 1

        def locate(t: float) -> Tuple[int, float]:
            s = min(max(t, 0.0), 1.0) * count
            k = min(int(s), count - 1)
            return k, s - k

        def point(t):
            k, w = locate(t)
            return (1.0 - w) * vertices[k] + w * vertices[k + 1]

        def velocity(t):
            k, _ = locate(t)
            return count * (vertices[k + 1] - vertices[k])

        return cls(point, velocity=velocity, name="polyline")

    @classmethod
    def from_spec(cls, spec: Dict) -> "ParamCurve":
        """Curva a partir de su descriptor en un escenario"""
        kind = spec["kind"]
        if kind == "segment":
            return cls.segment(spec["start"], spec["end"])
        if kind == "parabola":
            return cls.parabola(spec.get("t0", 0.0), spec.get("t1", 1.0))
        if kind == "circle_arc":
            return cls.circle_arc(spec.get("center", (0.0, 0.0)), spec.get("radius", 1.0),
                                  spec.get("t0", 0.0), spec.get("t1", 0.5 * np.pi))
        if kind == "polyline":
            return cls.polyline(spec["vertices"])
        raise ValueError(f"Curva desconocida '{kind}'")


@dataclass
class ArcLengthReport:
    chord_sums: List[Tuple[int, float]]
    extrapolated_sD: float
    sd_error: float
    quadrature_value: Optional[float] = None
    gap: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.chord_sums, columns=["N", "chord_sum"])

    def to_dict(self) -> Dict[str, object]:
        return {
            "chord_sums": [[n, s] for n, s in self.chord_sums],
            "extrapolated_sD": self.extrapolated_sD,
            "sd_error": self.sd_error,
            "sF": self.quadrature_value,
            "gap": self.gap,
        }


def chord_sum(field: DistanceField, points: np.ndarray) -> float:
    """Suma de rho entre vértices consecutivos (suma compensada, independiente del orden de evaluación)"""
    return math.fsum(field.pairwise(points[:-1], points[1:]))


def arc_length_D(field: DistanceField, curve: ParamCurve, n_list: Sequence[int], order: int = 4) -> ArcLengthReport:
    """
    Longitud s_D por sumas de cuerdas sobre subdivisiones uniformes y Richardson en 1 / N

    Args:
        field (DistanceField): Espacio de distancia
        curve (ParamCurve): Curva regular
        n_list (Sequence[int]): Números de subintervalos, estrictamente crecientes
        order (int): Orden máximo de la extrapolación

    Returns:
        ArcLengthReport: Sumas de cuerdas y s_D extrapolada
    """
    n_list = [int(n) for n in n_list]
    if not n_list or n_list[0] < 1 or any(m <= n for n, m in zip(n_list, n_list[1:])):
        raise ValueError("n_list debe ser una lista estrictamente creciente de enteros positivos")
    if n_list[-1] > MAX_CHORDS:
        raise ValueError(f"N no puede superar {MAX_CHORDS}")
    curve.check_regular()
    sums = []
    for n in n_list:
        points = curve.positions(np.linspace(curve.t0, curve.t1, n + 1))
        sums.append((n, chord_sum(field, points)))
    if len(sums) == 1:
        return ArcLengthReport(sums, sums[0][1], math.nan)
    value, error = richardson([1.0 / n for n in n_list], [s for _, s in sums], order)
    logger.debug("s_D de %s: %s -> %.12g", curve.name, sums, value)
    return ArcLengthReport(sums, value, error)


def arc_length_F(evaluator: FinslerEvaluator, curve: ParamCurve, nodes: int = 5, panels: int = 16) -> float:
    """s_F = integral de F(x(t), x'(t)) dt con Gauss-Legendre compuesta"""
    if nodes < 1 or panels < 1:
        raise ValueError("nodes y panels deben ser positivos")
    curve.check_regular()
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(curve.t0, curve.t1, panels + 1)
    terms = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        for xi, wi in zip(xs, ws):
            terms.append(half * wi * extract_F(evaluator, curve.tangent(mid + half * xi)))
    return math.fsum(terms)


def theorem3_gap(field: DistanceField, evaluator: FinslerEvaluator, curve: ParamCurve, n_list: Sequence[int],
                 nodes: int = 5, panels: int = 16) -> ArcLengthReport:
    """Compara s_D extrapolada con s_F sobre la misma curva; gap = |s_D - s_F|"""
    report = arc_length_D(field, curve, n_list)
    report.quadrature_value = arc_length_F(evaluator, curve, nodes, panels)
    report.gap = abs(report.extrapolated_sD - report.quadrature_value)
    logger.info("s_D = %.10g, s_F = %.10g, gap = %.3e", report.extrapolated_sD, report.quadrature_value, report.gap)
    return report


@dataclass
class ConsistencyReport:
    sD: float
    rho_ab: float
    equal: bool
    tol: float
    chord_sums: List[Tuple[int, float]]
    sF_polyline: Optional[float] = None
    levels_requested: int = 1
    refinement_failure: Optional[Dict[str, object]] = None

    @property
    def refinement_complete(self) -> bool:
        return self.refinement_failure is None

    def to_dict(self) -> Dict[str, object]:
        return {"sD": self.sD, "rho_ab": self.rho_ab, "equal": self.equal, "tol": self.tol,
                "chord_sums": [[n, s] for n, s in self.chord_sums], "sF_polyline": self.sF_polyline,
                "levels_requested": self.levels_requested, "levels_used": len(self.chord_sums),
                "refinement_complete": self.refinement_complete, "refinement_failure": self.refinement_failure}


def theorem4_consistency(field: DistanceField, evaluator: Optional[FinslerEvaluator], curve: CurveTrace,
                         levels: int = 4, tol: float = 1e-5) -> ConsistencyReport:
    """
    s_D del tramo [0, delta] de una curva de osculación frente a rho(a, b)

    La primera suma de cuerdas usa la rejilla de la propia traza; los niveles
    siguientes vuelven a trazar la curva con el doble de pasos y se extrapola
    en 1 / N.

    Args:
        field (DistanceField): Espacio de distancia
        evaluator (Optional[FinslerEvaluator]): Si se da, también se informa s_F de la poligonal
        curve (CurveTrace): Traza que contiene el tramo [0, delta]
        levels (int): Número de refinamientos (incluido el de la traza)
        tol (float): Tolerancia de la igualdad s_D = rho(a, b)

    Returns:
        ConsistencyReport: s_D, rho(a, b) y si coinciden
    """
    segment = curve.segment()
    base = len(segment.samples) - 1
    if base < 2:
        raise ValueError("La traza necesita al menos 2 intervalos en [0, delta]")
    a, b, delta = curve.generator_a, curve.generator_b, curve.delta
    sums = [(base, chord_sum(field, segment.points))]
    failure = None
    for level in range(1, levels):
        n = base * 2 ** level
        refined = trace_at(field, a, b, np.linspace(0.0, delta, n + 1)).segment()
        if not refined.complete or len(refined.samples) != n + 1:
            failure = {"level": level, "N": n}
            if refined.failure is not None:
                failure.update(refined.failure.to_dict())
            logger.warning("Refinamiento de nivel %d incompleto; se usa lo calculado hasta ahora", level)
            break
        sums.append((n, chord_sum(field, refined.points)))
    if len(sums) > 1:
        s_d, _ = richardson([1.0 / n for n, _ in sums], [s for _, s in sums], order=len(sums) - 1)
    else:
        s_d = sums[0][1]
    report = ConsistencyReport(s_d, delta, bool(abs(s_d - delta) <= tol), tol, sums, levels_requested=levels,
                               refinement_failure=failure)
    if evaluator is not None:
        points = segment.points
        steps = np.diff(points, axis=0)
        report.sF_polyline = math.fsum(extract_F(evaluator, 0.5 * (p + q), q - p)
                                       for p, q, step in zip(points[:-1], points[1:], steps)
                                       if np.linalg.norm(step) > 0.0)
    logger.info("Consistencia: s_D = %.10g, rho(a, b) = %.10g, iguales = %s", s_d, delta, report.equal)
    return report


@dataclass
class StraightnessReport:
    chord_deviation: float
    affinity_residual: float
    finsler_speed_residual: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {"chord_deviation": self.chord_deviation, "affinity_residual": self.affinity_residual,
                "finsler_speed_residual": self.finsler_speed_residual}


def straightness_and_affinity(curve: CurveTrace, evaluator: Optional[FinslerEvaluator] = None) -> StraightnessReport:
    """
    Rectitud de la curva y afinidad de su parámetro r

    chord_deviation es la máxima distancia euclídea de los puntos al segmento a-b.
    affinity_residual es (max - min) / media del avance euclídeo |o(r) - a| por
    unidad de r entre muestras consecutivas; es 0 si el parámetro es afín.
    """
    segment = curve.segment()
    points, r = segment.points, segment.r_values
    if len(points) < 3:
        raise ValueError("Se necesitan al menos 3 muestras en [0, delta]")
    a, b = curve.generator_a, curve.generator_b
    chord = b - a
    w = np.clip((points - a) @ chord / (chord @ chord), 0.0, 1.0)
    deviation = float(np.max(np.linalg.norm(points - (a + w[:, None] * chord), axis=1)))

    progress = np.linalg.norm(points - a, axis=1)
    rates = np.diff(progress) / np.diff(r)
    affinity = float((np.max(rates) - np.min(rates)) / np.mean(rates))

    report = StraightnessReport(deviation, affinity)
    if evaluator is not None:
        speeds = np.array([extract_F(evaluator, 0.5 * (p + q), q - p) for p, q in zip(points[:-1], points[1:])])
        speeds /= np.diff(r)
        report.finsler_speed_residual = float(np.max(np.abs(speeds - 1.0)))
    return report


@dataclass
class D7Report:
    bounded: bool
    growth_ratio: float
    partials: List[float]

    def to_dict(self) -> Dict[str, object]:
        return {"bounded": self.bounded, "growth_ratio": self.growth_ratio, "partials": self.partials}


def d7_growth(field: DistanceField, x, y, ladder: Optional[Sequence[float]] = None, rel_step: float = 1e-2) -> D7Report:
    """
    Crecimiento de d/dr [rho(x, x + r u) / r] al encoger r

    Si rho es de Finsler la derivada se mantiene acotada cerca de r = 0. Se informa el
    cociente entre su valor en el radio más pequeño y en el mayor.
    """
    x = as_point(x, field.dim)
    u = np.asarray(y, dtype=float)
    u = u / np.linalg.norm(u)
    ladder = default_ladder() if ladder is None else tuple(ladder)

    def ratio(r: float) -> float:
        return eval_distance(field, x, x + r * u) / r

    partials = [(ratio(r * (1.0 + rel_step)) - ratio(r * (1.0 - rel_step))) / (2.0 * r * rel_step) for r in ladder]
    growth = abs(partials[-1]) / max(abs(partials[0]), 1e-6)
    report = D7Report(bool(growth <= D7_GROWTH_LIMIT), float(growth), [float(p) for p in partials])
    if not report.bounded:
        logger.warning("Las derivadas de rho / r crecen x%.1f al encoger r: no parecen acotadas", growth)
    return report
