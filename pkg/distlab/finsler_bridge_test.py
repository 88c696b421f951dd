"""
Tests para finsler_bridge.py: extracción de F, indicatrices, longitudes s_D y s_F
y las comprobaciones sobre curvas de osculación.
"""

import numpy as np
import pytest

import finsler_bridge
from distance_core import (TangentVector, eval_distance, euclidean, fraction_transform, hyperbolic_chart,
                           metric_transform, minkowski_pnorm, snowflake_transform)
from errors import ExtrapolationDivergenceError
from finsler_bridge import (FinslerEvaluator, ParamCurve, arc_length_D, arc_length_F, cross_validate_F, d7_growth,
                            default_ladder, extract_F, indicatrix_sample, richardson, straightness_and_affinity,
                            theorem3_gap, theorem4_consistency)
from osculation_engine import TraceFailure, trace, trace_at

PARABOLA_LENGTH = (2 * np.sqrt(5) + np.arcsinh(2)) / 4


@pytest.fixture(params=["euclidean", "pnorm", "transform", "hyperbolic"])
def evaluator(request) -> FinslerEvaluator:
    """Evaluador de F sobre cada espacio incluido"""
    return FinslerEvaluator({
        "euclidean": euclidean(2),
        "pnorm": minkowski_pnorm(2, 4),
        "transform": metric_transform(euclidean(2), fraction_transform()),
        "hyperbolic": hyperbolic_chart(2),
    }[request.param])


def test_default_ladder():
    """Prueba la escalera de radios 0.1 * 2^-k"""
    assert default_ladder() == pytest.approx([0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125])
    assert len(default_ladder(2.0, 3)) == 3


def test_richardson_removes_polynomial_error():
    """Prueba que la extrapolación recupera g(0) de un polinomio de grado 2"""
    nodes = [0.1, 0.05, 0.025, 0.0125]
    values = [3.0 + 2.0 * h - 5.0 * h * h for h in nodes]
    value, _ = richardson(nodes, values, order=2)
    assert value == pytest.approx(3.0, abs=1e-12)


def test_evaluator_validation():
    """Prueba que se rechazan escaleras y métodos no válidos"""
    field = euclidean(2)
    with pytest.raises(ValueError):
        FinslerEvaluator(field, r_ladder=(0.1, 0.2, 0.05))
    with pytest.raises(ValueError):
        FinslerEvaluator(field, r_ladder=(0.1, 0.05))
    with pytest.raises(ValueError):
        FinslerEvaluator(field, method="secant")


def test_extract_F_euclidean():
    """Prueba que en E^2 F es la norma euclídea"""
    assert extract_F(FinslerEvaluator(euclidean(2)), (0.3, -1.0), (3, 4)) == pytest.approx(5.0, rel=1e-12)


def test_extract_F_metric_transform():
    """Prueba que f(s) = s / (1 + s) con f'(0) = 1 no cambia F"""
    evaluator = FinslerEvaluator(metric_transform(euclidean(2), fraction_transform()))
    assert extract_F(evaluator, (1, 1), (0.6, -0.8)) == pytest.approx(1.0, abs=1e-8)
    assert evaluator.err_estimate_last <= 1e-6


def test_extract_F_hyperbolic_origin():
    """Prueba que en el origen de la carta F es la norma euclídea"""
    evaluator = FinslerEvaluator(hyperbolic_chart(2))
    assert extract_F(evaluator, (0, 0), (1, 0)) == pytest.approx(1.0, abs=1e-8)


def test_extract_F_hyperbolic_riemannian():
    """Prueba F^2 = |y|^2 - <x, y>^2 / (1 + |x|^2) en la carta del hiperboloide"""
    x, y = np.array([0.8, -0.4]), np.array([0.3, 0.9])
    expected = np.sqrt(y @ y - (x @ y) ** 2 / (1 + x @ x))
    assert extract_F(FinslerEvaluator(hyperbolic_chart(2)), x, y) == pytest.approx(expected, rel=1e-7)


def test_extract_F_accepts_tangent_vector():
    """Prueba la llamada con un TangentVector"""
    evaluator = FinslerEvaluator(euclidean(2))
    assert extract_F(evaluator, TangentVector(np.zeros(2), np.array([0.0, 2.0]))) == pytest.approx(2.0)


def test_extract_F_zero_vector():
    """Prueba que y = 0 se rechaza"""
    with pytest.raises(ValueError):
        extract_F(FinslerEvaluator(euclidean(2)), (0, 0), (0, 0))


def test_extract_F_snowflake_diverges():
    """Prueba que rho^(1/2) no tiene métrica de Finsler: rho / r diverge"""
    evaluator = FinslerEvaluator(metric_transform(euclidean(2), snowflake_transform(0.5)))
    with pytest.raises(ExtrapolationDivergenceError):
        extract_F(evaluator, (0, 0), (1, 0))


def test_F_norm_properties(evaluator):
    """Prueba homogeneidad positiva, simetría y desigualdad triangular de F sobre 100 pares (x, y)"""
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.uniform(-1, 1, size=2)
        y1, y2 = rng.normal(size=(2, 2))
        f1 = extract_F(evaluator, x, y1)
        for scale in (0.5, 2.0, 10.0):
            assert extract_F(evaluator, x, scale * y1) == pytest.approx(scale * f1, rel=1e-12)
        assert extract_F(evaluator, x, -y1) == pytest.approx(f1, rel=1e-7)
        assert extract_F(evaluator, x, y1 + y2) <= f1 + extract_F(evaluator, x, y2) + 1e-9


def test_cross_validate_F(evaluator):
    """Prueba que los métodos ratio y radial_derivative coinciden"""
    assert cross_validate_F(evaluator, (0.2, 0.5), (1.0, -2.0)) <= 1e-7


def test_indicatrix_euclidean_is_circle():
    """Prueba que la indicatriz euclídea es la circunferencia unidad"""
    sample = indicatrix_sample(FinslerEvaluator(euclidean(2)), (0.5, 0.5), 64)
    assert np.linalg.norm(sample.points, axis=1) == pytest.approx(np.ones(64), abs=1e-10)
    assert sample.classification == "strictly_convex"
    assert list(sample.to_frame().columns) == ["theta", "y0", "y1", "F_unit"]


def test_indicatrix_pnorm_strictly_convex():
    """Prueba que la indicatriz de la norma 4 es la bola unidad de esa norma"""
    sample = indicatrix_sample(FinslerEvaluator(minkowski_pnorm(2, 4)), (0, 0), 64)
    assert sample.convex
    assert sample.classification == "strictly_convex"
    assert np.sum(sample.points ** 4, axis=1) == pytest.approx(np.ones(64), abs=1e-8)


def test_indicatrix_requires_resolution():
    """Prueba que la indicatriz necesita al menos 32 ángulos"""
    with pytest.raises(ValueError):
        indicatrix_sample(FinslerEvaluator(euclidean(2)), (0, 0), 16)


def test_param_curve_regularity():
    """Prueba que una curva con velocidad nula no es regular"""
    with pytest.raises(ValueError):
        ParamCurve.segment((1, 1), (1, 1)).check_regular()
    ParamCurve.parabola().check_regular()


def test_param_curve_from_spec():
    """Prueba la construcción de curvas desde su descriptor"""
    arc = ParamCurve.from_spec({"kind": "circle_arc", "radius": 2.0, "t0": 0.0, "t1": np.pi})
    assert arc.position(np.pi / 2) == pytest.approx([0.0, 2.0])
    polyline = ParamCurve.from_spec({"kind": "polyline", "vertices": [[0, 0], [1, 0], [1, 2]]})
    assert polyline.position(0.5) == pytest.approx([1.0, 0.0])
    assert polyline.position(0.75) == pytest.approx([1.0, 1.0])
    assert ParamCurve.from_spec({"kind": "parabola", "t0": -1.0, "t1": 1.0}).position(-1.0) == pytest.approx([-1, 1])
    with pytest.raises(ValueError):
        ParamCurve.from_spec({"kind": "spiral"})


def test_arc_length_D_segment():
    """Prueba que las sumas de cuerdas de un segmento euclídeo valen su longitud"""
    report = arc_length_D(euclidean(2), ParamCurve.segment((0, 0), (1, 0)), [4, 8, 16])
    assert report.extrapolated_sD == pytest.approx(1.0, abs=1e-14)
    assert list(report.to_frame().columns) == ["N", "chord_sum"]


def test_arc_length_D_parabola():
    """Prueba la longitud de la parábola y = x^2 en [0, 1]"""
    report = arc_length_D(euclidean(2), ParamCurve.parabola(), [8, 16, 32, 64, 128])
    sums = [s for _, s in report.chord_sums]
    assert np.all(np.diff(sums) > 0)
    assert report.extrapolated_sD == pytest.approx(PARABOLA_LENGTH, abs=1e-8)


def test_arc_length_D_metric_transform_increases():
    """Prueba que con f cóncava las sumas de cuerdas crecen hacia la longitud euclídea"""
    field = metric_transform(euclidean(2), fraction_transform())
    report = arc_length_D(field, ParamCurve.segment((0, 0), (1, 0)), [8, 16, 32, 64, 128])
    sums = [s for _, s in report.chord_sums]
    assert np.all(np.diff(sums) > 0)
    assert sums[-1] < 1.0
    assert report.extrapolated_sD == pytest.approx(1.0, abs=1e-5)


def test_arc_length_D_validation():
    """Prueba que n_list debe ser creciente"""
    with pytest.raises(ValueError):
        arc_length_D(euclidean(2), ParamCurve.parabola(), [16, 8])


def test_arc_length_F_segment():
    """Prueba s_F de un segmento euclídeo"""
    value = arc_length_F(FinslerEvaluator(euclidean(2)), ParamCurve.segment((0, 0), (0.6, 0.8)))
    assert value == pytest.approx(1.0, abs=1e-12)


def test_arc_length_F_hyperbolic_radial_segment():
    """Prueba que el segmento radial de 0 a (x, 0) mide arsinh(x)"""
    value = arc_length_F(FinslerEvaluator(hyperbolic_chart(2)), ParamCurve.segment((0, 0), (1.5, 0)))
    assert value == pytest.approx(np.arcsinh(1.5), abs=1e-7)


def test_arc_length_F_quadrature_order():
    """Prueba que Gauss-Legendre de 2 nodos reduce el error al doblar los paneles"""
    evaluator = FinslerEvaluator(euclidean(2))
    curve = ParamCurve(lambda t: np.array([np.exp(t), 0.0]), velocity=lambda t: np.array([np.exp(t), 0.0]))
    coarse = abs(arc_length_F(evaluator, curve, nodes=2, panels=2) - (np.e - 1))
    fine = abs(arc_length_F(evaluator, curve, nodes=2, panels=4) - (np.e - 1))
    assert coarse / fine >= 4.0


def test_theorem3_gap_parabola():
    """Prueba que s_D y s_F coinciden sobre la parábola euclídea"""
    report = theorem3_gap(euclidean(2), FinslerEvaluator(euclidean(2)), ParamCurve.parabola(), [8, 16, 32, 64, 128])
    assert report.gap <= 1e-6
    assert report.to_dict()["sF"] == pytest.approx(PARABOLA_LENGTH, abs=1e-9)


def test_chord_gap_shrinks_with_n():
    """Prueba que |s_D^N - s_F| decrece al menos como 1 / N y que s_D no baja de rho(a, b)"""
    field = euclidean(2)
    curve = ParamCurve.parabola()
    s_f = arc_length_F(FinslerEvaluator(field), curve)
    report = arc_length_D(field, curve, [100, 1000, 10_000])
    gaps = [abs(s - s_f) for _, s in report.chord_sums]
    assert gaps[1] <= gaps[0] / 10
    assert gaps[2] <= gaps[1] / 10
    assert gaps[2] <= 1e-5
    assert report.extrapolated_sD >= eval_distance(field, (0, 0), (1, 1)) - 1e-9


def test_theorem3_gap_hyperbolic_arc():
    """Prueba que s_D y s_F coinciden sobre un arco de circunferencia en la carta hiperbólica"""
    field = hyperbolic_chart(2)
    report = theorem3_gap(field, FinslerEvaluator(field), ParamCurve.circle_arc(), [8, 16, 32, 64, 128])
    assert report.gap <= 1e-5


@pytest.mark.parametrize("field", [euclidean(2), hyperbolic_chart(2)])
def test_theorem4_consistency_holds(field):
    """Prueba que s_D del tramo [0, delta] coincide con rho(a, b) en espacios con geodésicas"""
    delta = eval_distance(field, (0.2, 0.1), (1.0, 0.6))
    curve = trace(field, (0.2, 0.1), (1.0, 0.6), r_min=0.0, r_max=delta, steps=8)
    report = theorem4_consistency(field, FinslerEvaluator(field), curve)
    assert report.equal
    assert report.sD == pytest.approx(delta, abs=1e-5)
    assert report.sF_polyline == pytest.approx(delta, abs=1e-2)
    assert [n for n, _ in report.chord_sums] == [8, 16, 32, 64]
    assert report.refinement_complete


def test_theorem4_records_incomplete_refinement(monkeypatch):
    """Prueba que un refinamiento que no se completa queda registrado en el informe"""
    field = euclidean(2)
    curve = trace(field, (0, 0), (1, 0), r_min=0.0, r_max=1.0, steps=8)

    def failing_trace_at(field_, a, b, r_values):
        half = len(r_values) // 2
        partial = trace_at(field_, a, b, r_values[:half])
        partial.failure = TraceFailure(float(r_values[half]), "OsculationConvergenceError", "sin convergencia")
        return partial

    monkeypatch.setattr(finsler_bridge, "trace_at", failing_trace_at)
    report = theorem4_consistency(field, None, curve, levels=3)
    assert not report.refinement_complete
    assert report.refinement_failure["level"] == 1
    assert report.refinement_failure["N"] == 16
    assert report.refinement_failure["error"] == "OsculationConvergenceError"
    assert [n for n, _ in report.chord_sums] == [8]
    assert report.to_dict()["levels_used"] == 1
    assert report.to_dict()["levels_requested"] == 3


def test_theorem4_consistency_fails_for_metric_transform():
    """Prueba que con f(s) = s / (1 + s) s_D tiende a 1 mientras rho(a, b) = 1/2"""
    field = metric_transform(euclidean(2), fraction_transform())
    curve = trace(field, (0, 0), (1, 0), r_min=0.0, r_max=0.5, steps=8)
    report = theorem4_consistency(field, None, curve)
    assert report.rho_ab == pytest.approx(0.5)
    assert report.sD == pytest.approx(1.0, abs=1e-3)
    assert not report.equal
    assert report.sF_polyline is None


@pytest.mark.parametrize("field", [euclidean(2), minkowski_pnorm(2, 4)])
def test_straightness_normed_spaces(field):
    """Prueba que en espacios normados la curva es recta y r es un parámetro afín"""
    curve = trace(field, (0.1, -0.2), (0.9, 0.4), steps=16)
    report = straightness_and_affinity(curve, FinslerEvaluator(field))
    assert report.chord_deviation <= 1e-8
    assert report.affinity_residual <= 1e-6
    assert report.finsler_speed_residual <= 1e-6


def test_straightness_metric_transform_not_affine():
    """Prueba que la transformada métrica conserva la recta pero no la afinidad de r"""
    field = metric_transform(euclidean(2), fraction_transform())
    report = straightness_and_affinity(trace(field, (0, 0), (1, 0), steps=16))
    assert report.chord_deviation <= 1e-8
    assert report.affinity_residual > 1e-2
    assert report.finsler_speed_residual is None


@pytest.mark.parametrize("field", [euclidean(2), hyperbolic_chart(2), minkowski_pnorm(2, 4)])
def test_d7_growth_bounded(field):
    """Prueba que en los espacios suaves la derivada de rho / r no crece al encoger r"""
    report = d7_growth(field, (0, 0), (1.0, 1.0))
    assert report.bounded
    assert len(report.partials) == len(default_ladder())


def test_d7_growth_snowflake():
    """Prueba que con rho^(1/2) la derivada de rho / r explota"""
    report = d7_growth(metric_transform(euclidean(2), snowflake_transform(0.5)), (0, 0), (1, 0))
    assert not report.bounded
    assert report.growth_ratio > 100
