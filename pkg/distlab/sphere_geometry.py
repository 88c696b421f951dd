"""
Esferas de distancia S_a(r) = {q : rho(a, q) = r}.

Incluye la ecuación radial, el muestreo de esferas en n = 2 y n = 3, el
diagnóstico de convexidad por giro discreto, las normales de los planos
tangentes y la comprobación de simetría central.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from distance_core import DistanceField, as_point, eval_distance, grad2_distance
from errors import BracketError, DegenerateSphereError, DistlabError, NonMonotoneRadialError

logger = logging.getLogger(__name__)

TOL_RADIAL = 1e-10
MAX_BRACKET_EXPANSIONS = 60
CURVATURE_TOL = 1e-10
SYMMETRY_TOL = 1e-8
MIN_CONVEXITY_RESOLUTION = 16
SATURATION_EPS = 4.0 * np.finfo(float).eps


def radial_solve(field: DistanceField, a, u, r: float, tol: float = TOL_RADIAL) -> float:
    """
    Resuelve rho(a, a + t u) = r en t > 0

    Se acota la raíz duplicando el extremo superior y después se usa el método
    de Brent. El perfil radial debe ser estrictamente creciente: se comprueba en
    los nodos del acotamiento y con la derivada direccional en la raíz.

    Args:
        field (DistanceField): Espacio de distancia
        a: Centro de la esfera
        u: Dirección unitaria (norma euclídea)
        r (float): Radio, r > 0
        tol (float): Tolerancia sobre |rho(a, a + t u) - r|

    Returns:
        float: El t único del intervalo de acotamiento
    """
    a = as_point(a, field.dim)
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("La dirección de radial_solve debe ser unitaria")
    if not r > 0.0:
        raise ValueError(f"El radio debe ser positivo, no {r}")

    def profile(s: float) -> float:
        return eval_distance(field, a, a + s * u) - r

    lo, f_lo = 0.0, -r
    hi = r
    f_hi = profile(hi)
    expansions = 0
    while f_hi <= 0.0:
        if f_hi < f_lo:
            raise NonMonotoneRadialError("El perfil radial no es creciente",
                                         a=a, u=u, r=r, s=hi)
        if f_hi - f_lo <= SATURATION_EPS * max(r, 1.0):
            # perfil creciente pero acotado por debajo de r: la esfera no existe
            raise BracketError(f"El perfil radial se satura antes de alcanzar r = {r}", a=a, u=u, r=r, s=hi)
        lo, f_lo = hi, f_hi
        hi *= 2.0
        expansions += 1
        if expansions > MAX_BRACKET_EXPANSIONS:
            raise BracketError(f"No se encontró un intervalo para r = {r} en {MAX_BRACKET_EXPANSIONS} expansiones",
                               a=a, u=u, r=r)
        f_hi = profile(hi)

    t = brentq(profile, lo, hi, xtol=1e-14 * hi, maxiter=200)
    slope = float(np.dot(grad2_distance(field, a, a + t * u), u))
    if not slope > 0.0:
        raise NonMonotoneRadialError("La derivada radial no es positiva en la raíz", a=a, u=u, r=r, t=t)
    residual = abs(profile(t))
    if residual > tol:
        # un paso de Newton basta cuando Brent se queda corto por la escala de rho
        t -= profile(t) / slope
        residual = abs(profile(t))
        if residual > tol:
            raise BracketError(f"La ecuación radial no alcanza la tolerancia ({residual:.3e})", a=a, u=u, r=r)
    return float(t)


def radial_monotonicity(field: DistanceField, a, directions: Iterable, radii: Iterable[float]) -> Tuple[bool, float]:
    """
    Comprueba que r1 < r2 implica t(r1) < t(r2) en cada dirección

    Returns:
        Tuple[bool, float]: Si es monótono y el menor incremento de t encontrado
    """
    radii = np.sort(np.asarray(list(radii), dtype=float))
    worst = np.inf
    for u in directions:
        u = np.asarray(u, dtype=float)
        u = u / np.linalg.norm(u)
        ts = np.array([radial_solve(field, a, u, r) for r in radii])
        worst = min(worst, float(np.min(np.diff(ts))))
    return bool(worst > 0.0), worst


@dataclass
class SphereSample:
    center: np.ndarray
    radius: float
    angles: np.ndarray
    points: np.ndarray
    radial_t: np.ndarray
    residuals: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def to_frame(self) -> pd.DataFrame:
        """Tabla con una fila por punto en el orden de la rejilla angular"""
        frame = pd.DataFrame()
        if self.angles.ndim == 1:
            frame["theta"] = self.angles
        else:
            frame["theta"] = self.angles[:, 0]
            frame["phi"] = self.angles[:, 1]
        for i in range(self.dim):
            frame[f"x{i}"] = self.points[:, i]
        frame["radial_t"] = self.radial_t
        frame["residual"] = self.residuals
        return frame


def angular_grid(dim: int, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rejilla angular uniforme y sus direcciones unitarias

    n = 2: theta_k = 2 pi k / resolution.
    n = 3: theta polar en los puntos medios de resolution // 2 bandas y phi
    azimutal con resolution valores.
    """
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(resolution) / resolution
        return angles, np.column_stack([np.cos(angles), np.sin(angles)])
    if dim == 3:
        bands = max(resolution // 2, 2)
        theta = np.pi * (np.arange(bands) + 0.5) / bands
        phi = 2.0 * np.pi * np.arange(resolution) / resolution
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        angles = np.column_stack([tt.ravel(), pp.ravel()])
        directions = np.column_stack([np.sin(angles[:, 0]) * np.cos(angles[:, 1]),
                                      np.sin(angles[:, 0]) * np.sin(angles[:, 1]),
                                      np.cos(angles[:, 0])])
        return angles, directions
    raise ValueError(f"El muestreo de esferas solo admite n = 2 o n = 3, no n = {dim}")


def sphere_sample(field: DistanceField, a, r: float, resolution: int = 128) -> SphereSample:
    """
    Muestrea S_a(r) sobre una rejilla angular uniforme

    Args:
        field (DistanceField): Espacio de distancia
        a: Centro
        r (float): Radio
        resolution (int): Número de ángulos (n = 2) o de valores de phi (n = 3)

    Returns:
        SphereSample: Puntos de la esfera con su t radial y su residuo
    """
    a = as_point(a, field.dim)
    if resolution < 4:
        raise ValueError("sphere_sample necesita al menos 4 ángulos")
    angles, directions = angular_grid(field.dim, resolution)
    radial_t = np.empty(len(directions))
    for k, u in enumerate(directions):
        try:
            radial_t[k] = radial_solve(field, a, u, r)
        except DistlabError as exc:
            exc.context["angle"] = angles[k]
            raise
    points = a + radial_t[:, None] * directions
    residuals = np.abs(field.pairwise(np.broadcast_to(a, points.shape), points) - r)
    return SphereSample(a, float(r), angles, points, radial_t, residuals)


def discrete_turning(polygon: np.ndarray) -> np.ndarray:
    """
    Curvatura discreta con signo en cada vértice de un polígono cerrado del plano

    Es el producto vectorial de las aristas que llegan y salen del vértice
    dividido por sus longitudes (el seno del ángulo de giro).
    """
    polygon = np.asarray(polygon, dtype=float)
    edges = np.roll(polygon, -1, axis=0) - polygon
    lengths = np.linalg.norm(edges, axis=1)
    scale = max(float(np.max(np.abs(polygon))), 1.0)
    if np.any(lengths <= 1e-14 * scale):
        raise DegenerateSphereError("Polígono degenerado: hay vértices repetidos",
                                    index=int(np.argmin(lengths)))
    incoming = np.roll(edges, 1, axis=0)
    incoming_len = np.roll(lengths, 1)
    cross = incoming[:, 0] * edges[:, 1] - incoming[:, 1] * edges[:, 0]
    return cross / (incoming_len * lengths)


def classify_polygon(polygon: np.ndarray, tol: float = CURVATURE_TOL) -> Tuple[str, np.ndarray]:
    """Devuelve 'strictly_convex', 'convex' o 'neither' y las curvaturas orientadas"""
    curvatures = discrete_turning(polygon)
    orientation = 1.0 if np.sum(curvatures) >= 0.0 else -1.0
    signed = orientation * curvatures
    if np.all(signed > tol):
        return "strictly_convex", signed
    if np.all(signed >= -tol):
        return "convex", signed
    return "neither", signed


@dataclass
class ConvexityReport:
    strictly_convex: bool
    min_discrete_curvature: float
    worst_index: int
    symmetric: bool
    symmetry_residual: float
    classification: str

    def to_dict(self) -> dict:
        return {
            "strictly_convex": self.strictly_convex,
            "min_discrete_curvature": self.min_discrete_curvature,
            "worst_index": self.worst_index,
            "symmetric": self.symmetric,
            "symmetry_residual": self.symmetry_residual,
            "classification": self.classification,
        }


def convexity_check(sample: SphereSample, field: DistanceField, curvature_tol: float = CURVATURE_TOL,
                    symmetry_tol: float = SYMMETRY_TOL) -> ConvexityReport:
    """
    Convexidad estricta de una esfera muestreada en el plano

    Args:
        sample (SphereSample): Esfera muestreada, n = 2 y al menos 16 vértices
        field (DistanceField): Espacio usado para la comprobación de simetría
        curvature_tol (float): Curvatura discreta mínima exigida
        symmetry_tol (float): Tolerancia de symmetry_check

    Returns:
        ConvexityReport: Resultado de la convexidad y de la simetría
    """
    if sample.dim != 2:
        raise ValueError("convexity_check solo está disponible para n = 2")
    if len(sample.points) < MIN_CONVEXITY_RESOLUTION:
        raise ValueError(f"convexity_check necesita al menos {MIN_CONVEXITY_RESOLUTION} vértices")
    classification, signed = classify_polygon(sample.points, curvature_tol)
    worst = int(np.argmin(signed))
    symmetric, residual = symmetry_check(field, sample.center, sample.radius, len(sample.points), symmetry_tol)
    return ConvexityReport(classification == "strictly_convex", float(signed[worst]), worst,
                           symmetric, residual, classification)


def tangent_normal(field: DistanceField, a, p) -> np.ndarray:
    """
    Normal exterior unitaria de S_a(rho(a, p)) en p

    Es el gradiente de rho(a, .) en p normalizado, así que no depende de una
    reparametrización creciente de rho.
    """
    gradient = grad2_distance(field, a, p)
    length = float(np.linalg.norm(gradient))
    if not np.isfinite(length) or length < 1e-14:
        raise DegenerateSphereError("El gradiente se anula: la esfera es degenerada en p", a=a, p=p)
    return gradient / length


def symmetry_check(field: DistanceField, a, r: float, resolution: int = 128,
                   tol: float = SYMMETRY_TOL) -> Tuple[bool, float]:
    """
    Simetría central (euclídea) de S_a(r) respecto de a

    Returns:
        Tuple[bool, float]: (residuo <= tol, max_p |rho(a, 2a - p) - r|)
    """
    sample = sphere_sample(field, a, r, resolution)
    reflected = 2.0 * sample.center - sample.points
    distances = field.pairwise(np.broadcast_to(sample.center, reflected.shape), reflected)
    residual = float(np.max(np.abs(distances - r)))
    return bool(residual <= tol), residual

