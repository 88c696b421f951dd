"""
Tests para osculation_engine.py: puntos de osculación, curvas de osculación y
sus comprobaciones (aditividad, cuasigeodésicas, plano tangente común y unicidad).
"""

import numpy as np
import pandas as pd
import pytest

from distance_core import (DistanceField, eval_distance, euclidean, fraction_transform, grad2_distance,
                           hyperbolic_chart, metric_transform, minkowski_pnorm)
from errors import DegenerateOsculationError, NonUniqueOsculationError, OsculationConvergenceError
from osculation_engine import (Branch, additivity_residual, common_tangent_check, multistart_uniqueness,
                               osculation_point, perpendicular_normal, quasigeodesic_check, trace, trace_at,
                               traces_intersect)

SPACES = {
    "euclidean": euclidean(2),
    "pnorm": minkowski_pnorm(2, 4),
    "transform": metric_transform(euclidean(2), fraction_transform()),
    "hyperbolic": hyperbolic_chart(2),
}


@pytest.fixture(params=list(SPACES))
def space(request) -> DistanceField:
    """Los cuatro espacios incluidos en dimensión 2"""
    return SPACES[request.param]


@pytest.fixture(scope="module")
def euclidean_trace():
    """Traza euclídea de (0, 0) a (1, 0) sobre r en [-0.5, 1.5]"""
    return trace(euclidean(2), (0, 0), (1, 0), -0.5, 1.5, 64)


@pytest.fixture(scope="module")
def hyperbolic_trace():
    """Traza hiperbólica de (1, 0) a (0, 1) sobre [0, delta]"""
    field = hyperbolic_chart(2)
    delta = eval_distance(field, (1, 0), (0, 1))
    return trace(field, (1, 0), (0, 1), 0.0, delta, 64)


def brute_force_angle(field, a, b, r, count=10_000):
    """Ángulo (visto desde a) del mejor punto de una muestra densa de S_a(|r|)"""
    a, b = np.asarray(a, float), np.asarray(b, float)
    angles = 2 * np.pi * np.arange(count) / count
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    radius = abs(r)
    lo, hi = np.zeros(count), np.full(count, radius)
    while np.any(field.rho(a, a + hi[:, None] * directions) < radius):
        hi = np.where(field.rho(a, a + hi[:, None] * directions) < radius, 2 * hi, hi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        inside = field.rho(a, a + mid[:, None] * directions) < radius
        lo, hi = np.where(inside, mid, lo), np.where(inside, hi, mid)
    values = field.rho(a + hi[:, None] * directions, b)
    return angles[np.argmin(values) if r >= 0 else np.argmax(values)]


def test_euclidean_outer_example():
    """Prueba la osculación exterior de dos circunferencias colineales"""
    solution = osculation_point(euclidean(2), (0, 0), (4, 0), 1.0, Branch.OUTER_MIN)
    assert solution.point == pytest.approx([1.0, 0.0], abs=1e-10)
    assert solution.lam == pytest.approx(-1.0)
    assert solution.tangency_residual <= 1e-8
    assert solution.r_partner == pytest.approx(3.0)
    assert solution.converged


def test_euclidean_inner_example():
    """Prueba la rama inner_max: el punto más lejano de la circunferencia"""
    solution = osculation_point(euclidean(2), (0, 0), (4, 0), -1.0, Branch.INNER_MAX)
    assert solution.point == pytest.approx([-1.0, 0.0], abs=1e-10)
    assert solution.r_partner == pytest.approx(5.0)
    assert solution.lam == pytest.approx(1.0)
    assert solution.branch is Branch.INNER_MAX


def test_pnorm_diagonal_example():
    """Prueba que en la norma 4 la osculación a mitad de camino de (0, 0) y (2, 2) es (1, 1)"""
    field = minkowski_pnorm(2, 4)
    delta = eval_distance(field, (0, 0), (2, 2))
    assert delta == pytest.approx(2 * 2 ** 0.25)
    solution = osculation_point(field, (0, 0), (2, 2), delta / 2)
    assert solution.point == pytest.approx([1.0, 1.0], abs=1e-8)


def test_generators_are_analytic():
    """Prueba que r = 0 y r = delta devuelven los generadores sin resolver"""
    field = hyperbolic_chart(2)
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    delta = eval_distance(field, a, b)
    assert np.array_equal(osculation_point(field, a, b, 0.0).point, a)
    at_b = osculation_point(field, a, b, delta)
    assert np.array_equal(at_b.point, b)
    assert at_b.generator


def test_osculation_preconditions():
    """Prueba que se rechazan generadores iguales y ramas incompatibles con el signo de r"""
    with pytest.raises(ValueError):
        osculation_point(euclidean(2), (1, 1), (1, 1), 0.5)
    with pytest.raises(ValueError):
        osculation_point(euclidean(2), (0, 0), (1, 0), -0.5, Branch.OUTER_MIN)
    with pytest.raises(ValueError):
        osculation_point(euclidean(2), (0, 0), (1, 0), 0.5, Branch.INNER_MAX)


def test_convergence_error_carries_r():
    """Prueba que sin presupuesto de iteraciones se informa del r que no convergió"""
    with pytest.raises(OsculationConvergenceError) as info:
        osculation_point(hyperbolic_chart(2), (1, 0), (0, 1), 0.3, max_iterations=0)
    assert info.value.context["r"] == 0.3


def test_flat_point_of_pnorm_sphere_is_degenerate():
    """Prueba que en el eje la esfera de la norma 4 tiene curvatura nula y la osculación es degenerada"""
    with pytest.raises(DegenerateOsculationError) as info:
        osculation_point(minkowski_pnorm(2, 4), (0, 0), (1, 0), 0.5)
    assert info.value.solution.point == pytest.approx([0.5, 0.0])
    assert info.value.solution.min_eigen_constrained == 0.0


@pytest.mark.parametrize("name", list(SPACES))
def test_first_order_conditions_and_lambda_signs(name):
    """Prueba la colinealidad de gradientes, |lambda| y el signo de lambda en toda la traza"""
    field = SPACES[name]
    a, b = np.array([0.2, -0.3]), np.array([0.9, 0.5])
    curve = trace(field, a, b, steps=16)
    assert curve.complete
    for s in curve.samples:
        if s.generator:
            continue
        ga, gb = grad2_distance(field, a, s.point), grad2_distance(field, b, s.point)
        assert s.tangency_angle <= 1e-6
        assert abs(s.lam) * np.linalg.norm(gb) / np.linalg.norm(ga) == pytest.approx(1.0, abs=1e-6)
        assert s.min_eigen_constrained > 0
        if 0 < s.r < curve.delta:
            assert s.lam < 0
        else:
            assert s.lam > 0


@pytest.mark.parametrize("name", list(SPACES))
def test_matches_brute_force_oracle(name):
    """Prueba el resolvedor frente a una búsqueda exhaustiva sobre 10^4 puntos de la esfera"""
    field = SPACES[name]
    rng = np.random.default_rng(2024)
    step = 2 * np.pi / 10_000
    for _ in range(20):
        a, b = rng.uniform(-0.5, 0.5, size=(2, 2))
        while np.linalg.norm(a - b) < 0.2:
            b = rng.uniform(-0.5, 0.5, size=2)
        delta = eval_distance(field, a, b)
        u = rng.uniform(-0.5, 1.5)
        while abs(u) < 0.05 or abs(u - 1) < 0.05:
            u = rng.uniform(-0.5, 1.5)
        r = u * delta
        solution = osculation_point(field, a, b, r)
        offset = solution.point - a
        found = np.arctan2(offset[1], offset[0]) % (2 * np.pi)
        expected = brute_force_angle(field, a, b, r)
        gap = abs((found - expected + np.pi) % (2 * np.pi) - np.pi)
        assert gap <= step


def test_euclidean_trace_is_straight(euclidean_trace):
    """Prueba que la traza euclídea es el eje x y contiene los generadores"""
    r = euclidean_trace.r_values
    assert euclidean_trace.complete
    assert np.all(np.diff(r) > 0)
    assert 0.0 in r and 1.0 in r
    assert np.max(np.abs(euclidean_trace.points[:, 1])) <= 1e-8
    assert euclidean_trace.points[:, 0] == pytest.approx(r, abs=1e-8)


def test_euclidean_trace_additivity(euclidean_trace):
    """Prueba la aditividad de la distancia a lo largo de la traza euclídea"""
    assert additivity_residual(euclidean(2), euclidean_trace) <= 1e-9


def test_euclidean_quasigeodesic(euclidean_trace):
    """Prueba que regenerar desde pares interiores reproduce la recta"""
    assert quasigeodesic_check(euclidean(2), euclidean_trace, pair_count=3, seed=1) <= 1e-7


def test_pnorm_quasigeodesic():
    """Prueba que las geodésicas de Minkowski son rectas que se regeneran a sí mismas"""
    field = minkowski_pnorm(2, 4)
    curve = trace(field, (0.1, -0.2), (0.8, 0.4), steps=32)
    assert quasigeodesic_check(field, curve, pair_count=2, seed=3) <= 1e-6


def test_metric_transform_trace_is_straight_but_not_additive():
    """Prueba que la transformada métrica da una traza recta que no es aditiva"""
    field = metric_transform(euclidean(2), fraction_transform())
    curve = trace(field, (0, 0), (1, 0), steps=32)
    assert np.max(np.abs(curve.points[:, 1])) <= 1e-8
    assert additivity_residual(field, curve) > 1e-3


def test_hyperbolic_trace_bows_toward_origin(hyperbolic_trace):
    """Prueba que la geodésica hiperbólica de (1, 0) a (0, 1) pasa por (1, 1) / sqrt(6)"""
    middle = trace_at(hyperbolic_chart(2), (1, 0), (0, 1), [hyperbolic_trace.delta / 2])
    point = [s.point for s in middle.samples if 0 < s.r < middle.delta][0]
    assert point == pytest.approx(np.full(2, 1 / np.sqrt(6)), abs=1e-7)


def test_hyperbolic_trace_checks(hyperbolic_trace):
    """Prueba aditividad, regeneración y plano tangente común sobre la traza hiperbólica"""
    field = hyperbolic_chart(2)
    assert additivity_residual(field, hyperbolic_trace) <= 1e-6
    assert quasigeodesic_check(field, hyperbolic_trace, pair_count=2, seed=0) <= 1e-5
    assert common_tangent_check(field, hyperbolic_trace, 32) <= 1e-4


@pytest.mark.parametrize("name", ["euclidean", "transform"])
def test_common_tangent_plane(name):
    """Prueba que las esferas centradas en la traza comparten plano tangente en p0"""
    field = SPACES[name]
    curve = trace(field, (0, 0), (0.5, 0.5), steps=16)
    assert common_tangent_check(field, curve, 8) <= 1e-6


def test_trace_to_frame(euclidean_trace):
    """Prueba las columnas del CSV de una traza"""
    frame = euclidean_trace.to_frame()
    assert isinstance(frame, pd.DataFrame)
    assert list(frame.columns) == ["r", "x0", "x1", "r_partner", "lambda", "tangency_residual",
                                   "min_eigen_constrained", "branch", "converged"]
    assert set(frame["branch"]) == {"outer_min", "inner_max"}


def test_trace_rejects_few_steps():
    """Prueba que trace necesita al menos 8 pasos"""
    with pytest.raises(ValueError):
        trace(euclidean(2), (0, 0), (1, 0), steps=4)


def test_osculation_hyperbolic_near_partner():
    """Prueba la convergencia hiperbólica cerca de b, donde las dos esferas casi se confunden"""
    field = hyperbolic_chart(2)
    delta = eval_distance(field, (0.2, 0.1), (1.0, 0.6))
    for fraction in (0.89, 0.95, 0.99):
        solution = osculation_point(field, (0.2, 0.1), (1.0, 0.6), fraction * delta)
        assert solution.converged
        assert solution.tangency_residual <= 1e-8
        assert solution.r_partner == pytest.approx((1 - fraction) * delta, abs=1e-7)


def test_hyperbolic_traces_complete():
    """Prueba que las trazas hiperbólicas por defecto se completan para generadores aleatorios"""
    field = hyperbolic_chart(2)
    rng = np.random.default_rng(5)
    for _ in range(10):
        a, b = rng.uniform(-1.5, 1.5, size=(2, 2))
        curve = trace(field, a, b, steps=32)
        assert curve.complete, curve.failure
        assert np.max([s.tangency_residual for s in curve.samples]) <= 1e-8


@pytest.mark.parametrize("name", list(SPACES))
def test_trace_endpoint_continuity(name):
    """Prueba que el primer punto tras cada generador dista de él menos de 2 * paso * Lipschitz local"""
    field = SPACES[name]
    a, b = np.array([0.2, -0.3]), np.array([0.9, 0.5])
    segment = trace(field, a, b, steps=32).segment()
    steps = np.diff(segment.r_values)
    speeds = segment.gaps() / steps
    assert len(segment.samples) == 17
    assert np.linalg.norm(segment.points[1] - a) <= 2 * steps[0] * np.max(speeds[1:3])
    assert np.linalg.norm(b - segment.points[-2]) <= 2 * steps[-1] * np.max(speeds[-3:-1])


def test_trace_failure_returns_partial_prefix():
    """Prueba que un fallo interrumpe la traza y devuelve lo calculado con el registro del error"""
    field = metric_transform(euclidean(2), fraction_transform())
    curve = trace(field, (0, 0), (1, 0), -0.25, 1.75, 8)
    assert not curve.complete
    assert curve.failure.r >= 1.0
    assert curve.failure.error == "BracketError"
    assert np.all(curve.r_values < 1.0)
    assert 0.5 in curve.r_values


def test_perpendicular_normal_euclidean(euclidean_trace):
    """Prueba que la normal perpendicular a la recta es su dirección"""
    assert perpendicular_normal(euclidean(2), euclidean_trace, 20) == pytest.approx([1.0, 0.0])
    assert perpendicular_normal(euclidean(2), euclidean_trace, 0) == pytest.approx([1.0, 0.0])


@pytest.mark.parametrize("name", list(SPACES))
def test_multistart_unique(name):
    """Prueba que el multiarranque encuentra un único punto de osculación"""
    field = SPACES[name]
    rng = np.random.default_rng(8)
    for k in range(10):
        a, b = rng.uniform(-0.5, 0.5, size=(2, 2))
        delta = eval_distance(field, a, b)
        r = rng.choice([-0.4, 0.3, 0.7, 1.3]) * delta
        assert multistart_uniqueness(field, a, b, r, starts=16, seed=k) == 1


def test_multistart_with_workers_matches_serial():
    """Prueba que el resultado no depende del número de hilos"""
    field = hyperbolic_chart(2)
    serial = multistart_uniqueness(field, (0, 0), (1, 1), 0.6, seed=4)
    parallel = multistart_uniqueness(field, (0, 0), (1, 1), 0.6, seed=4, workers=4)
    assert serial == parallel == 1


def test_multistart_rejects_few_starts():
    """Prueba que se necesitan al menos 8 arranques"""
    with pytest.raises(ValueError):
        multistart_uniqueness(euclidean(2), (0, 0), (1, 0), 0.5, starts=4)


def test_non_unique_osculation_on_flat_spheres():
    """Prueba que con la norma 1 (esferas con lados planos) la osculación no es única"""
    l1 = DistanceField(2, lambda a, b: float(np.sum(np.abs(b - a))), grad=lambda a, b: np.sign(b - a), name="l1")
    assert multistart_uniqueness(l1, (0, 0), (2, 2), 1.0, seed=0) > 1
    with pytest.raises(NonUniqueOsculationError):
        osculation_point(l1, (0, 0), (2, 2), 1.0, uniqueness_starts=16)


def test_traces_intersect():
    """Prueba el corte de dos trazas planas y el caso de rectas paralelas"""
    field = euclidean(2)
    horizontal = trace(field, (0, 0), (1, 0), steps=8)
    vertical = trace(field, (0.5, -0.5), (0.5, 0.5), steps=8)
    parallel = trace(field, (0, 1), (1, 1), steps=8)
    assert traces_intersect(horizontal, vertical)
    assert not traces_intersect(horizontal, parallel)
