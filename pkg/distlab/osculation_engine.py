"""
Puntos de osculación de esferas de distancia y curvas de osculación o(r; a, b).

Para r >= 0 el punto de osculación minimiza rho(p, b) sobre S_a(r) (rama
outer_min); para r < 0 maximiza rho(p, b) sobre S_a(|r|) (rama inner_max).
El resolvedor combina gradiente proyectado sobre la esfera (la proyección es
una resolución radial desde a) con pasos de Newton sobre el hessiano del
lagrangiano restringido al plano tangente.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import null_space
from scipy.spatial.distance import cdist

from distance_core import DistanceField, as_point
from errors import (DegenerateOsculationError, DegenerateSphereError, DistlabError, NonUniqueOsculationError,
                    OsculationConvergenceError)
from sphere_geometry import radial_solve, tangent_normal

logger = logging.getLogger(__name__)

TOL_TANGENCY = 1e-8
MAX_ITERATIONS = 200
MAX_NEWTON_FAILURES = 15
# Newton se intenta cuando |gradiente tangencial| / |grad rho_b| baja de este valor
NEWTON_SWITCH = 5e-2
# por debajo de este gradiente tangencial la curvatura negativa se abandona por su autovector
ESCAPE_SWITCH = 1e-5
ARMIJO = 1e-4
MAX_HALVINGS = 30
CLUSTER_RADIUS = 1e-6
DEFAULT_STEPS = 64
MIN_STEPS = 8
# un hueco mayor que GAP_FACTOR veces la mediana se avisa en el log
GAP_FACTOR = 4.0


class Branch(str, Enum):
    OUTER_MIN = "outer_min"
    INNER_MAX = "inner_max"


@dataclass
class OsculationSolution:
    point: np.ndarray
    r: float
    r_partner: float
    lam: float
    tangency_residual: float
    tangency_angle: float
    min_eigen_constrained: float
    branch: Branch
    converged: bool
    iterations: int = 0
    generator: bool = False

    def to_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"r": self.r}
        for i, value in enumerate(self.point):
            row[f"x{i}"] = float(value)
        row.update({
            "r_partner": self.r_partner,
            "lambda": self.lam,
            "tangency_residual": self.tangency_residual,
            "min_eigen_constrained": self.min_eigen_constrained,
            "branch": self.branch.value,
            "converged": self.converged,
        })
        return row


def _generator_solution(point: np.ndarray, r: float, r_partner: float) -> OsculationSolution:
    # o(0) = a y o(delta) = b: no hay problema de osculación que resolver
    return OsculationSolution(point.copy(), float(r), float(r_partner), float("nan"), 0.0, 0.0, float("nan"),
                              Branch.OUTER_MIN, True, 0, generator=True)


def _project(field: DistanceField, a: np.ndarray, q: np.ndarray, radius: float) -> np.ndarray:
    """Proyección radial de q sobre S_a(radius)"""
    offset = q - a
    length = float(np.linalg.norm(offset))
    if length == 0.0:
        raise DegenerateSphereError("No se puede proyectar el propio centro sobre la esfera", a=a)
    u = offset / length
    return a + radial_solve(field, a, u, radius) * u


def _tangency(ga: np.ndarray, gb: np.ndarray) -> Tuple[float, float, float]:
    """Multiplicador lambda (ga ~ lambda gb), residuo |ga - lambda gb| y ángulo entre las rectas"""
    lam = float(np.dot(ga, gb) / np.dot(gb, gb))
    residual = float(np.linalg.norm(ga - lam * gb))
    ua = ga / np.linalg.norm(ga)
    ub = gb / np.linalg.norm(gb)
    cosine = float(np.dot(ua, ub))
    sine = float(np.linalg.norm(ua - cosine * ub))
    return lam, residual, float(np.arctan2(sine, abs(cosine)))


@dataclass
class _LocalModel:
    ga: np.ndarray
    gb: np.ndarray
    basis: np.ndarray
    grad_t: np.ndarray

    @property
    def gnorm(self) -> float:
        return float(np.linalg.norm(self.grad_t))


def _local_model(field: DistanceField, a, b, p, sigma: float) -> _LocalModel:
    ga = field.grad2(a, p)
    gb = field.grad2(b, p)
    basis = null_space((ga / np.linalg.norm(ga))[None, :])
    return _LocalModel(ga, gb, basis, basis.T @ (sigma * gb))


def _reduced_hessian(field: DistanceField, a, b, p, model: _LocalModel, sigma: float) -> np.ndarray:
    """Hessiano del lagrangiano de sigma * rho_b sobre el plano tangente de S_a"""
    mu = float(np.dot(model.gb, model.ga) / np.dot(model.ga, model.ga))
    hessian = sigma * (field.hess2(b, p) - mu * field.hess2(a, p))
    reduced = model.basis.T @ hessian @ model.basis
    return 0.5 * (reduced + reduced.T)


def _eigen_floor(eigenvalues: np.ndarray) -> float:
    return 1e-12 * max(float(np.max(np.abs(eigenvalues))), 1.0)


def _newton_step(field, a, b, p, radius, sigma, model: _LocalModel, reduced: np.ndarray) -> Optional[np.ndarray]:
    """
    Un paso de Newton en el plano tangente seguido de la proyección radial.

    Si el hessiano reducido no es definido positivo se da un paso en la
    dirección de curvatura negativa para salir del punto crítico. Devuelve
    None si ningún paso reduce el gradiente tangencial.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(reduced)
    reach = 0.5 * float(np.linalg.norm(p - a))
    floor = _eigen_floor(eigenvalues)
    if eigenvalues[0] < -floor:
        escape = model.basis @ eigenvectors[:, 0]
        return _project(field, a, p + 0.2 * reach * escape, radius)

    # curvatura casi nula: se acota el autovalor para no dividir por cero
    inverse = eigenvectors @ np.diag(1.0 / np.maximum(eigenvalues, floor)) @ eigenvectors.T
    move = model.basis @ (inverse @ -model.grad_t)
    length = float(np.linalg.norm(move))
    if length > reach:
        move *= reach / length
    for _ in range(8):
        candidate = _project(field, a, p + move, radius)
        if _local_model(field, a, b, candidate, sigma).gnorm < model.gnorm:
            return candidate
        move *= 0.5
    return None


def _initial_point(field, a, b, radius, branch: Branch, init) -> np.ndarray:
    if init is not None:
        init = as_point(init, field.dim)
        if not np.array_equal(init, a):
            return _project(field, a, init, radius)
    toward_b = (b - a) / np.linalg.norm(b - a)
    direction = toward_b if branch is Branch.OUTER_MIN else -toward_b
    return _project(field, a, a + direction, radius)


def osculation_point(field: DistanceField, a, b, r: float, branch: Optional[Branch] = None, init=None, *,
                     tol_tangency: float = TOL_TANGENCY, max_iterations: int = MAX_ITERATIONS,
                     uniqueness_starts: int = 0, seed: int = 0) -> OsculationSolution:
    """
    Punto de osculación de S_a(|r|) con una esfera centrada en b

    Args:
        field (DistanceField): Espacio de distancia
        a: Primer generador
        b: Segundo generador, distinto de a
        r (float): Parámetro con signo; negativo en la rama inner_max
        branch (Optional[Branch]): Rama; por defecto outer_min si r >= 0 e inner_max si r < 0
        init: Punto inicial opcional (se proyecta sobre la esfera)
        tol_tangency (float): Tolerancia de |grad rho_a - lambda grad rho_b|
        max_iterations (int): Presupuesto de iteraciones
        uniqueness_starts (int): Si es > 0 se verifica la unicidad con ese número de arranques
        seed (int): Semilla del multiarranque

    Returns:
        OsculationSolution: Punto, multiplicador y residuos
    """
    a = as_point(a, field.dim)
    b = as_point(b, field.dim)
    if np.array_equal(a, b):
        raise ValueError("Los generadores a y b deben ser distintos")
    delta = field.eval(a, b)
    if branch is None:
        branch = Branch.OUTER_MIN if r >= 0.0 else Branch.INNER_MAX
    branch = Branch(branch)
    if (branch is Branch.OUTER_MIN and r < 0.0) or (branch is Branch.INNER_MAX and r > 0.0):
        raise ValueError(f"La rama {branch.value} no admite r = {r}")
    if r == 0.0:
        return _generator_solution(a, 0.0, delta)
    if r == delta:
        return _generator_solution(b, delta, 0.0)

    radius = abs(r)
    sigma = 1.0 if branch is Branch.OUTER_MIN else -1.0
    p = _initial_point(field, a, b, radius, branch, init)
    objective = sigma * field.eval(p, b)
    alpha = None
    newton_failures = 0
    newton_stalled = False
    force_newton = False
    iterations = 0

    while True:
        model = _local_model(field, a, b, p, sigma)
        lam, residual, angle = _tangency(model.ga, model.gb)
        if residual <= tol_tangency or iterations >= max_iterations:
            break
        iterations += 1

        near = model.gnorm <= NEWTON_SWITCH * float(np.linalg.norm(model.gb))
        if (near or force_newton) and newton_failures < MAX_NEWTON_FAILURES and not newton_stalled:
            escape = force_newton or model.gnorm <= ESCAPE_SWITCH
            force_newton = False
            reduced = _reduced_hessian(field, a, b, p, model, sigma)
            eigenvalues = np.linalg.eigvalsh(reduced)
            # con curvatura negativa lejos de un punto crítico manda el gradiente
            if escape or eigenvalues[0] > _eigen_floor(eigenvalues):
                candidate = _newton_step(field, a, b, p, radius, sigma, model, reduced)
                if candidate is not None:
                    p = candidate
                    objective = sigma * field.eval(p, b)
                    continue
                newton_failures += 1
                newton_stalled = True

        # gradiente proyectado con búsqueda de Armijo
        direction = -(model.basis @ model.grad_t)
        length = float(np.linalg.norm(direction))
        if length == 0.0:
            break
        reach = 0.5 * float(np.linalg.norm(p - a))
        if alpha is None:
            alpha = reach / max(float(np.linalg.norm(model.gb)), 1e-300)
        accepted = False
        for _ in range(MAX_HALVINGS):
            step = min(alpha, reach / length)
            trial = _project(field, a, p + step * direction, radius)
            trial_objective = sigma * field.eval(trial, b)
            if trial_objective <= objective - ARMIJO * step * model.gnorm ** 2:
                p, objective = trial, trial_objective
                alpha = 2.0 * step
                accepted = True
                break
            alpha = 0.5 * step
        if accepted:
            newton_stalled = False
        elif newton_stalled or newton_failures >= MAX_NEWTON_FAILURES:
            break
        else:
            # la búsqueda lineal ya no ve descenso: solo queda Newton
            force_newton = True
            alpha = None

    solution = OsculationSolution(p, float(r), field.eval(b, p), lam, residual, angle, float("nan"),
                                  branch, residual <= tol_tangency, iterations)
    if not solution.converged:
        raise OsculationConvergenceError(
            f"Sin convergencia para r = {r} tras {iterations} iteraciones (residuo {residual:.3e})",
            r=r, a=a, b=b, residual=residual)
    reduced = _reduced_hessian(field, a, b, p, model, sigma)
    solution.min_eigen_constrained = float(np.linalg.eigvalsh(reduced)[0])
    logger.debug("Osculación r=%g en %d iteraciones, residuo %.2e", r, iterations, residual)
    if uniqueness_starts > 0:
        count = multistart_uniqueness(field, a, b, r, uniqueness_starts, seed=seed)
        if count > 1:
            raise NonUniqueOsculationError(
                f"Se encontraron {count} puntos de osculación distintos para r = {r}: las esferas no son "
                "estrictamente convexas", r=r, count=count)
    if solution.min_eigen_constrained <= 0.0:
        raise DegenerateOsculationError(
            f"Osculación degenerada en r = {r}: el hessiano proyectado no es definido positivo "
            f"({solution.min_eigen_constrained:.3e}); la esfera no es estrictamente convexa en el punto",
            solution=solution, r=r, point=p)
    return solution


# ---------------------------------------------------------------------------
# Curvas de osculación
# ---------------------------------------------------------------------------

@dataclass
class TraceFailure:
    r: float
    error: str
    message: str

    def to_dict(self) -> Dict[str, object]:
        return {"r": self.r, "error": self.error, "message": self.message}


@dataclass
class CurveTrace:
    generator_a: np.ndarray
    generator_b: np.ndarray
    samples: List[OsculationSolution]
    delta: float
    failure: Optional[TraceFailure] = None

    @property
    def r_values(self) -> np.ndarray:
        return np.array([s.r for s in self.samples])

    @property
    def points(self) -> np.ndarray:
        return np.array([s.point for s in self.samples])

    @property
    def complete(self) -> bool:
        return self.failure is None

    def segment(self) -> "CurveTrace":
        """La parte de la traza con 0 <= r <= delta"""
        inside = [s for s in self.samples if 0.0 <= s.r <= self.delta]
        return CurveTrace(self.generator_a, self.generator_b, inside, self.delta, self.failure)

    def gaps(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.to_row() for s in self.samples])


def _march(field: DistanceField, a, b, delta: float, values: Sequence[float], sign: float,
           solutions: Dict[float, OsculationSolution]) -> None:
    """Continuación predictor-corrector sobre una rama, alejándose de r = 0"""
    history: List[np.ndarray] = [a]
    r_history: List[float] = [0.0]
    branch = Branch.OUTER_MIN if sign > 0 else Branch.INNER_MAX
    for r in values:
        if r == delta:
            solution = _generator_solution(b, delta, 0.0)
        else:
            init = None
            if len(history) >= 2 and not np.array_equal(history[-1], a):
                # predictor secante a partir de los dos últimos puntos
                ratio = (r - r_history[-1]) / (r_history[-1] - r_history[-2])
                init = history[-1] + ratio * (history[-1] - history[-2])
                if np.array_equal(init, a):
                    init = history[-1]
            solution = osculation_point(field, a, b, r, branch, init)
        solutions[r] = solution
        history.append(solution.point)
        r_history.append(r)


def trace_at(field: DistanceField, a, b, r_values: Sequence[float]) -> CurveTrace:
    """
    Curva de osculación evaluada en una lista arbitraria de parámetros r

    Los generadores (r = 0 y r = delta) se añaden siempre. Si el resolvedor falla
    la traza se interrumpe y se devuelve lo calculado hasta entonces junto con
    el registro del error.
    """
    a = as_point(a, field.dim)
    b = as_point(b, field.dim)
    delta = field.eval(a, b)
    grid = np.unique(np.concatenate([np.asarray(r_values, dtype=float), [0.0, delta]]))
    # un r a distancia de redondeo de 0 o de delta es un generador
    grid = np.where(np.abs(grid - delta) <= 1e-12 * delta, delta, grid)
    grid = np.where(np.abs(grid) <= 1e-12 * delta, 0.0, grid)
    grid = np.unique(grid)

    solutions: Dict[float, OsculationSolution] = {0.0: _generator_solution(a, 0.0, delta)}
    failure = None
    for sign, values in ((1.0, grid[grid > 0.0]), (-1.0, grid[grid < 0.0][::-1])):
        values = [float(r) for r in values]
        try:
            _march(field, a, b, delta, values, sign, solutions)
        except DistlabError as exc:
            pending = next(r for r in values if r not in solutions)
            failure = TraceFailure(pending, type(exc).__name__, str(exc))
            logger.warning("Traza interrumpida en r = %g: %s", pending, exc)
            break

    samples = [solutions[r] for r in sorted(solutions)]
    trace = CurveTrace(a, b, samples, delta, failure)
    if len(samples) > 2:
        gaps = trace.gaps()
        if np.max(gaps) > GAP_FACTOR * np.median(gaps):
            logger.warning("Hueco de continuación grande: %.3e (mediana %.3e)", np.max(gaps), np.median(gaps))
    return trace


def trace(field: DistanceField, a, b, r_min: Optional[float] = None, r_max: Optional[float] = None,
          steps: int = DEFAULT_STEPS) -> CurveTrace:
    """
    Traza o(r; a, b) sobre una rejilla uniforme de r

    Args:
        field (DistanceField): Espacio de distancia
        a: Primer generador
        b: Segundo generador
        r_min (Optional[float]): Extremo inferior, por defecto -delta / 2
        r_max (Optional[float]): Extremo superior, por defecto 3 delta / 2
        steps (int): Número de intervalos de la rejilla, al menos 8

    Returns:
        CurveTrace: Muestras ordenadas por r, con r = 0 y r = delta incluidos
    """
    if steps < MIN_STEPS:
        raise ValueError(f"trace necesita al menos {MIN_STEPS} pasos")
    delta = field.eval(as_point(a, field.dim), as_point(b, field.dim))
    r_min = -0.5 * delta if r_min is None else float(r_min)
    r_max = 1.5 * delta if r_max is None else float(r_max)
    if not r_min < r_max:
        raise ValueError(f"Ventana de r vacía: [{r_min}, {r_max}]")
    logger.info("Trazando %s en [%g, %g] con %d pasos", field.name, r_min, r_max, steps)
    return trace_at(field, a, b, np.linspace(r_min, r_max, steps + 1))


def additivity_residual(field: DistanceField, curve: CurveTrace, triple_count: int = 64, seed: int = 0) -> float:
    """
    max |rho(p_i, p_j) + rho(p_j, p_k) - rho(p_i, p_k)| sobre ternas ordenadas del tramo 0 <= r <= delta

    Si hay pocas muestras se usan todas las ternas; si no, triple_count ternas
    aleatorias más la terna (primera, central, última).
    """
    points = curve.segment().points
    m = len(points)
    if m < 3:
        raise ValueError("Se necesitan al menos 3 muestras en [0, delta]")
    all_triples = list(combinations(range(m), 3))
    if len(all_triples) <= triple_count:
        triples = all_triples
    else:
        rng = np.random.default_rng(seed)
        triples = [tuple(sorted(rng.choice(m, size=3, replace=False))) for _ in range(triple_count)]
        triples.append((0, m // 2, m - 1))
    idx = np.array(triples)
    left = field.pairwise(points[idx[:, 0]], points[idx[:, 1]])
    right = field.pairwise(points[idx[:, 1]], points[idx[:, 2]])
    whole = field.pairwise(points[idx[:, 0]], points[idx[:, 2]])
    return float(np.max(np.abs(left + right - whole)))


def _hausdorff(first: np.ndarray, second: np.ndarray) -> float:
    distances = cdist(first, second)
    return float(max(distances.min(axis=1).max(), distances.min(axis=0).max()))


def quasigeodesic_check(field: DistanceField, curve: CurveTrace, pair_count: int = 3,
                        steps: Optional[int] = None, seed: int = 0) -> float:
    """
    Regenera la curva desde pares de puntos interiores y mide la distancia de Hausdorff

    Para cada par (a', b') = (p_i, p_j) con i < j se recalcula o(.; a', b') en
    los parámetros r'_k = signo(k - i) rho(a', p_k), de modo que cada punto
    original tiene su homólogo en la curva regenerada.

    Args:
        field (DistanceField): Espacio de distancia
        curve (CurveTrace): Traza completa
        pair_count (int): Número de pares aleatorios
        steps (Optional[int]): Puntos de la traza usados en la comparación (todos por defecto)
        seed (int): Semilla de la elección de pares

    Returns:
        float: Máxima distancia de Hausdorff simétrica discreta
    """
    samples = curve.samples
    interior = [k for k, s in enumerate(samples) if not s.generator and 0 < k < len(samples) - 1]
    if len(interior) < 2:
        raise ValueError("La traza no tiene puntos interiores suficientes")
    rng = np.random.default_rng(seed)
    if steps is None or steps >= len(samples):
        chosen = np.arange(len(samples))
    else:
        chosen = np.unique(np.linspace(0, len(samples) - 1, max(steps, 2)).round().astype(int))

    worst = 0.0
    for _ in range(pair_count):
        i, j = sorted(rng.choice(interior, size=2, replace=False))
        anchor, partner = samples[i].point, samples[j].point
        targets = np.union1d(chosen, [i, j])
        r_bar = np.array([np.sign(k - i) * field.eval(anchor, samples[k].point) if k != i else 0.0
                          for k in targets])
        regenerated = trace_at(field, anchor, partner, r_bar)
        if not regenerated.complete:
            raise OsculationConvergenceError(f"Falló la regeneración desde el par ({i}, {j})",
                                             failure=regenerated.failure.to_dict())
        original = np.array([samples[k].point for k in targets])
        distance = _hausdorff(original, regenerated.points)
        logger.debug("Par (%d, %d): Hausdorff %.3e", i, j, distance)
        worst = max(worst, distance)
    return worst


def _line_angles(normals: np.ndarray) -> np.ndarray:
    """Ángulo entre las rectas generadas por cada par de normales unitarias"""
    cosines = normals @ normals.T
    sines = np.linalg.norm(normals[:, None, :] - cosines[:, :, None] * normals[None, :, :], axis=2)
    return np.arctan2(sines, np.abs(cosines))


def common_tangent_check(field: DistanceField, curve: CurveTrace, p0_index: int) -> float:
    """
    Máximo ángulo entre las normales en p0 de las esferas centradas en los demás puntos de la curva

    Si todas las esferas comparten plano tangente en p0 el resultado es ~0.
    """
    p0 = curve.samples[p0_index].point
    centers = [s.point for k, s in enumerate(curve.samples) if k != p0_index and not np.array_equal(s.point, p0)]
    if len(centers) < 3:
        raise ValueError("Se necesitan al menos 3 centros distintos de p0")
    normals = np.array([tangent_normal(field, center, p0) for center in centers])
    return float(np.max(_line_angles(normals)))


def perpendicular_normal(field: DistanceField, curve: CurveTrace, index: int) -> np.ndarray:
    """
    Normal en p_index del plano tangente común (la dirección ortogonal a la curva
    en el sentido de las esferas), tomada de la esfera centrada en la muestra vecina
    """
    samples = curve.samples
    neighbour = index - 1 if index > 0 else index + 1
    normal = tangent_normal(field, samples[neighbour].point, samples[index].point)
    return normal if neighbour < index else -normal


def _solve_start(field, a, b, r, start) -> Optional[np.ndarray]:
    try:
        return osculation_point(field, a, b, r, init=start).point
    except DegenerateOsculationError as exc:
        # convergió: la degeneración de segundo orden no afecta al recuento
        return exc.solution.point
    except OsculationConvergenceError as exc:
        logger.debug("Arranque descartado: %s", exc)
        return None


def _cluster_count(points: np.ndarray, radius: float) -> int:
    order = np.lexsort(points.T[::-1])
    representatives: List[np.ndarray] = []
    for point in points[order]:
        if not any(np.linalg.norm(point - rep) <= radius for rep in representatives):
            representatives.append(point)
    return len(representatives)


def multistart_uniqueness(field: DistanceField, a, b, r: float, starts: int = 16, seed: int = 0,
                          workers: int = 1) -> int:
    """
    Resuelve la osculación desde varios puntos de S_a(|r|) y cuenta las soluciones distintas

    Returns:
        int: Número de agrupamientos de soluciones convergidas (1 si la osculación es única)
    """
    if starts < 8:
        raise ValueError("multistart_uniqueness necesita al menos 8 arranques")
    a = as_point(a, field.dim)
    b = as_point(b, field.dim)
    rng = np.random.default_rng(seed)
    if field.dim == 2:
        angles = 2.0 * np.pi * (np.arange(starts) + rng.uniform(0.1, 0.9, size=starts)) / starts
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        directions = rng.normal(size=(starts, field.dim))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
    initial = [a + radial_solve(field, a, u, abs(r)) * u for u in directions]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda start: _solve_start(field, a, b, r, start), initial))
    else:
        results = [_solve_start(field, a, b, r, start) for start in initial]
    converged = [p for p in results if p is not None]
    if not converged:
        raise OsculationConvergenceError(f"Ningún arranque convergió para r = {r}", r=r, starts=starts)
    count = _cluster_count(np.array(converged), CLUSTER_RADIUS)
    logger.info("Unicidad en r=%g: %d de %d arranques convergidos, %d soluciones", r, len(converged), starts, count)
    return count


def _orientation(p: np.ndarray, q: np.ndarray, s: np.ndarray) -> np.ndarray:
    return (q[..., 0] - p[..., 0]) * (s[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (s[..., 0] - p[..., 0])


def traces_intersect(first: CurveTrace, second: CurveTrace) -> bool:
    """Si las poligonales de dos trazas planas se cortan (tocarse en un vértice cuenta)"""
    if first.points.shape[1] != 2 or second.points.shape[1] != 2:
        raise ValueError("traces_intersect solo está disponible para n = 2")
    p1, p2 = first.points[:-1, None, :], first.points[1:, None, :]
    q1, q2 = second.points[None, :-1, :], second.points[None, 1:, :]
    d1 = _orientation(q1, q2, p1)
    d2 = _orientation(q1, q2, p2)
    d3 = _orientation(p1, p2, q1)
    d4 = _orientation(p1, p2, q2)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    touching = (d1 * d2 == 0) & (d3 * d4 == 0) & _boxes_overlap(p1, p2, q1, q2)
    return bool(np.any(proper | touching))


def _boxes_overlap(p1, p2, q1, q2) -> np.ndarray:
    low_p, high_p = np.minimum(p1, p2), np.maximum(p1, p2)
    low_q, high_q = np.minimum(q1, q2), np.maximum(q1, q2)
    return np.all((low_p <= high_q) & (low_q <= high_p), axis=-1)
