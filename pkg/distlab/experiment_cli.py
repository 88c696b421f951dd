"""
Ejecutor de escenarios de distlab.

Un escenario es un fichero JSON que nombra un espacio, un experimento y sus
parámetros, y opcionalmente las expectativas sobre las métricas resultantes.
El ejecutor valida el escenario contra scenario_schema.json, llama a las
operaciones correspondientes y escribe los CSV, report.json y un resumen.

Uso:
    python experiment_cli.py run scenarios/euclidean_trace.json --out resultados
    python experiment_cli.py validate scenarios/euclidean_trace.json
    python experiment_cli.py list-spaces
    python experiment_cli.py list-experiments

Códigos de salida: 0 todo correcto, 2 alguna expectativa falla, 3 error de
cálculo o de escenario.
"""

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from jsonschema import ValidationError, validate

from distance_core import SPACE_KINDS, TRANSFORMS, DistanceField, as_point, axiom_check, builtin_space
from errors import DistlabError, ExtrapolationDivergenceError, ScenarioError
from finsler_bridge import (FinslerEvaluator, ParamCurve, arc_length_D, cross_validate_F, d7_growth, extract_F,
                            indicatrix_sample, straightness_and_affinity, theorem3_gap, theorem4_consistency)
from osculation_engine import (additivity_residual, common_tangent_check, multistart_uniqueness, perpendicular_normal,
                               quasigeodesic_check, trace, traces_intersect)
from sphere_geometry import angular_grid, convexity_check, radial_monotonicity, sphere_sample, symmetry_check

logger = logging.getLogger(__name__)

VERSION = "0.1.0"
OUTPUT_ENV = "DISTLAB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "distlab_out"

EXIT_OK = 0
EXIT_EXPECTATION = 2
EXIT_ERROR = 3

MONOTONICITY_RESOLUTION = 8
MONOTONICITY_FRACTIONS = np.array([0.25, 0.5, 0.75, 1.0])

COMMON_DEFAULTS: Dict[str, Any] = {"steps": 64, "resolution": 128}
EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "axioms": {"low": -2.0, "high": 2.0, "tol": 1e-9},
    "sphere": {"tol": 1e-8},
    "trace": {},
    "quasigeodesic": {"pair_count": 3},
    "tangent_plane": {},
    "uniqueness": {"starts": 16, "workers": 1},
    "extract_metric": {"method": "ratio", "samples": 100},
    "indicatrix": {"resolution": 64},
    "arclength": {},
    "theorem3": {"nodes": 5, "panels": 16},
    "theorem4": {"levels": 4, "tol": 1e-5},
    "theorem5": {"resolution": 128, "tol": 1e-8},
}


@dataclass
class Scenario:
    space: Dict[str, Any]
    experiment: str
    params: Dict[str, Any]
    expect: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    output_dir: Optional[str] = None
    sha256: str = ""

    @classmethod
    def load_schema(cls) -> Dict[str, Any]:
        """Carga el esquema JSON de los escenarios"""
        schema_path = os.path.join(os.path.dirname(__file__), "scenario_schema.json")
        with open(schema_path, "r") as f:
            return json.load(f)

    @classmethod
    def check_schema(cls, data: Dict[str, Any]) -> None:
        """Valida un escenario contra el esquema (modo estricto: no se admiten claves desconocidas)"""
        try:
            validate(instance=data, schema=cls.load_schema())
        except ValidationError as e:
            location = "/".join(str(p) for p in e.absolute_path) or "(raíz)"
            raise ScenarioError(f"Error de validación en {location}: {e.message}", path=location) from e

    def to_dict(self) -> Dict[str, Any]:
        data = {"space": self.space, "experiment": self.experiment, "params": self.params}
        if self.expect:
            data["expect"] = self.expect
        if self.output_dir is not None:
            data["output_dir"] = self.output_dir
        return data


def parse_scenario(text: str) -> Scenario:
    """Valida el texto de un escenario y rellena los parámetros por defecto"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"JSON mal formado en la línea {e.lineno}, columna {e.colno}: {e.msg}",
                            line=e.lineno, column=e.colno) from e
    Scenario.check_schema(data)

    try:
        space = builtin_space(data["space"])
    except ValueError as e:
        raise ScenarioError(f"Espacio inválido: {e}", space=data["space"]) from e
    params = {**COMMON_DEFAULTS, **EXPERIMENT_DEFAULTS[data["experiment"]], **data["params"]}
    for key in ("a", "b", "x", "center"):
        if key in params:
            try:
                as_point(params[key], space.dim)
            except DistlabError as e:
                raise ScenarioError(f"El parámetro '{key}' no es válido: {e}", param=key) from e
    if "a" in params and "b" in params and params["a"] == params["b"]:
        raise ScenarioError("Los generadores 'a' y 'b' deben ser distintos", param="b")

    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return Scenario(data["space"], data["experiment"], params, data.get("expect", {}), data.get("output_dir"),
                    digest)


def load_scenario(path: str) -> Scenario:
    """
    Lee y valida un escenario

    Args:
        path (str): Ruta del fichero JSON

    Returns:
        Scenario: Escenario validado con los parámetros por defecto rellenados
    """
    if not os.path.exists(path):
        raise ScenarioError(f"No existe el escenario {path}", path=path)
    with open(path, "r", encoding="utf-8") as f:
        return parse_scenario(f.read())


# ---------------------------------------------------------------------------
# Experimentos
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    metrics: Dict[str, Any]
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


def _point(params, key, space: DistanceField) -> np.ndarray:
    return as_point(params[key], space.dim)


def _trace(space: DistanceField, params) -> Any:
    curve = trace(space, _point(params, "a", space), _point(params, "b", space), params.get("r_min"),
                  params.get("r_max"), params["steps"])
    if not curve.complete:
        raise DistlabError(f"La traza falló en r = {curve.failure.r}: {curve.failure.message}",
                           failure=curve.failure.to_dict())
    return curve


def _run_axioms(space, params) -> ExperimentResult:
    report = axiom_check(space, params["low"], params["high"], params["count"], params["tol"], params["seed"])
    metrics = report.to_dict()
    metrics["all_pass"] = report.all_pass
    return ExperimentResult(metrics)


def _run_sphere(space, params) -> ExperimentResult:
    center = _point(params, "center", space)
    sample = sphere_sample(space, center, params["radius"], params["resolution"])
    # t(r) en las direcciones de una rejilla gruesa y radios por debajo del pedido
    _, directions = angular_grid(space.dim, MONOTONICITY_RESOLUTION)
    monotone, increment = radial_monotonicity(space, center, directions, params["radius"] * MONOTONICITY_FRACTIONS)
    metrics: Dict[str, Any] = {"max_residual": float(np.max(sample.residuals)), "points": len(sample.points),
                               "radial_monotone": monotone, "min_radial_increment": increment}
    if space.dim == 2:
        metrics.update(convexity_check(sample, space, symmetry_tol=params["tol"]).to_dict())
    else:
        symmetric, residual = symmetry_check(space, center, params["radius"], params["resolution"], params["tol"])
        metrics.update({"symmetric": symmetric, "symmetry_residual": residual})
    return ExperimentResult(metrics, {"sphere": sample.to_frame()})


def _lambda_signs_ok(curve) -> bool:
    for s in curve.samples:
        if s.generator:
            continue
        if 0.0 < s.r < curve.delta and not s.lam < 0.0:
            return False
        if (s.r < 0.0 or s.r > curve.delta) and not s.lam > 0.0:
            return False
    return True


def _run_trace(space, params) -> ExperimentResult:
    curve = _trace(space, params)
    a, b = curve.generator_a, curve.generator_b
    chord = (b - a) / np.linalg.norm(b - a)
    offsets = curve.points - a
    off_axis = np.linalg.norm(offsets - np.outer(offsets @ chord, chord), axis=1)
    solved = [s for s in curve.samples if not s.generator]
    metrics = {
        "samples": len(curve.samples),
        "delta": curve.delta,
        "max_off_axis": float(np.max(off_axis)),
        "max_gap": float(np.max(curve.gaps())),
        "max_tangency_angle": max(s.tangency_angle for s in solved),
        "max_tangency_residual": max(s.tangency_residual for s in solved),
        "min_eigen_constrained": min(s.min_eigen_constrained for s in solved),
        "lambda_signs_ok": _lambda_signs_ok(curve),
        "additivity_residual": additivity_residual(space, curve, seed=params["seed"]),
    }
    return ExperimentResult(metrics, {"trace": curve.to_frame()})


def _run_quasigeodesic(space, params) -> ExperimentResult:
    curve = _trace(space, params)
    metrics = {
        "hausdorff": quasigeodesic_check(space, curve, params["pair_count"], seed=params["seed"]),
        "additivity_residual": additivity_residual(space, curve, seed=params["seed"]),
    }
    return ExperimentResult(metrics, {"trace": curve.to_frame()})


def _run_tangent_plane(space, params) -> ExperimentResult:
    curve = _trace(space, params)
    index = params.get("index", len(curve.samples) // 2)
    if index >= len(curve.samples):
        raise ScenarioError(f"index = {index} fuera de la traza ({len(curve.samples)} muestras)", param="index")
    normal = perpendicular_normal(space, curve, index)
    metrics = {
        "index": index,
        "max_normal_angle": common_tangent_check(space, curve, index),
        "perpendicular_normal": normal.tolist(),
    }
    return ExperimentResult(metrics, {"trace": curve.to_frame()})


def _run_uniqueness(space, params) -> ExperimentResult:
    a, b = _point(params, "a", space), _point(params, "b", space)
    rows = []
    for k, r in enumerate(params["radii"]):
        count = multistart_uniqueness(space, a, b, r, params["starts"], seed=params["seed"] + k,
                                      workers=params["workers"])
        rows.append({"r": r, "clusters": count})
    table = pd.DataFrame(rows)
    metrics = {"max_clusters": int(table["clusters"].max()), "min_clusters": int(table["clusters"].min())}
    return ExperimentResult(metrics, {"uniqueness": table})


def _run_extract_metric(space, params) -> ExperimentResult:
    evaluator = FinslerEvaluator(space, method=params["method"])
    x = _point(params, "x", space)
    rows = []
    for y in params["directions"]:
        y = np.asarray(y, dtype=float)
        growth = d7_growth(space, x, y, evaluator.r_ladder)
        try:
            value = extract_F(evaluator, x, y)
        except ExtrapolationDivergenceError as e:
            e.context["d7_growth"] = growth.to_dict()
            raise
        row = {f"x{i}": v for i, v in enumerate(x)}
        row.update({f"y{i}": v for i, v in enumerate(y)})
        row.update({"F": value, "err_estimate": evaluator.err_estimate_last,
                    "cross_gap": cross_validate_F(evaluator, x, y),
                    "d7_growth": growth.growth_ratio, "d7_bounded": growth.bounded})
        rows.append(row)
    table = pd.DataFrame(rows)

    # invariantes de F sobre pares (x, y) aleatorios
    rng = np.random.default_rng(params["seed"])
    homogeneity = symmetry = triangle = 0.0
    for _ in range(params["samples"]):
        xs = rng.uniform(-1.0, 1.0, space.dim)
        y1, y2 = rng.normal(size=(2, space.dim))
        f1 = evaluator.value(xs, y1)
        for scale in (0.5, 2.0, 10.0):
            homogeneity = max(homogeneity, abs(evaluator.value(xs, scale * y1) - scale * f1) / (scale * f1))
        symmetry = max(symmetry, abs(f1 - evaluator.value(xs, -y1)))
        triangle = max(triangle, evaluator.value(xs, y1 + y2) - f1 - evaluator.value(xs, y2))
    metrics = {
        "F": table["F"].tolist(),
        "max_cross_gap": float(table["cross_gap"].max()),
        "max_d7_growth": float(table["d7_growth"].max()),
        "d7_bounded": bool(table["d7_bounded"].all()),
        "homogeneity_residual": homogeneity,
        "symmetry_residual": symmetry,
        "triangle_violation": triangle,
    }
    return ExperimentResult(metrics, {"metric": table})


def _run_indicatrix(space, params) -> ExperimentResult:
    sample = indicatrix_sample(FinslerEvaluator(space), _point(params, "x", space), params["resolution"])
    metrics = {"classification": sample.classification, "strictly_convex": sample.classification == "strictly_convex",
               "min_curvature": sample.min_curvature}
    return ExperimentResult(metrics, {"indicatrix": sample.to_frame()})


def _run_arclength(space, params) -> ExperimentResult:
    report = arc_length_D(space, ParamCurve.from_spec(params["curve"]), params["n_list"])
    metrics = {"extrapolated_sD": report.extrapolated_sD, "sd_error": report.sd_error,
               "last_chord_sum": report.chord_sums[-1][1]}
    return ExperimentResult(metrics, {"chord_sums": report.to_frame()})


def _run_theorem3(space, params) -> ExperimentResult:
    report = theorem3_gap(space, FinslerEvaluator(space), ParamCurve.from_spec(params["curve"]), params["n_list"],
                          params["nodes"], params["panels"])
    metrics = {"sD": report.extrapolated_sD, "sF": report.quadrature_value, "gap": report.gap}
    return ExperimentResult(metrics, {"chord_sums": report.to_frame()})


def _run_theorem4(space, params) -> ExperimentResult:
    curve = _trace(space, params)
    report = theorem4_consistency(space, FinslerEvaluator(space), curve, params["levels"], params["tol"])
    metrics = report.to_dict()
    return ExperimentResult(metrics, {"trace": curve.to_frame(),
                                      "chord_sums": pd.DataFrame(report.chord_sums, columns=["N", "chord_sum"])})


def _run_theorem5(space, params) -> ExperimentResult:
    curve = _trace(space, params)
    a = _point(params, "a", space)
    center = _point(params, "center", space) if "center" in params else a
    radius = params.get("radius", 0.5 * curve.delta)
    straightness = straightness_and_affinity(curve, FinslerEvaluator(space))
    symmetric, residual = symmetry_check(space, center, radius, params["resolution"], params["tol"])
    metrics = {**straightness.to_dict(), "symmetric": symmetric, "symmetry_residual": residual}
    if space.dim == 2:
        # la misma curva desplazada en perpendicular a b - a: en un espacio normado no la corta
        chord = curve.generator_b - curve.generator_a
        shift = 0.5 * np.array([-chord[1], chord[0]])
        partner = trace(space, curve.generator_a + shift, curve.generator_b + shift, params.get("r_min"),
                        params.get("r_max"), params["steps"])
        metrics["parallel_traces_intersect"] = traces_intersect(curve, partner)
    return ExperimentResult(metrics, {"trace": curve.to_frame()})


EXPERIMENTS: Dict[str, Callable[[DistanceField, Dict[str, Any]], ExperimentResult]] = {
    "axioms": _run_axioms,
    "sphere": _run_sphere,
    "trace": _run_trace,
    "quasigeodesic": _run_quasigeodesic,
    "tangent_plane": _run_tangent_plane,
    "uniqueness": _run_uniqueness,
    "extract_metric": _run_extract_metric,
    "indicatrix": _run_indicatrix,
    "arclength": _run_arclength,
    "theorem3": _run_theorem3,
    "theorem4": _run_theorem4,
    "theorem5": _run_theorem5,
}


# ---------------------------------------------------------------------------
# Ejecución e informes
# ---------------------------------------------------------------------------

def judge(expect: Dict[str, Dict[str, Any]], metrics: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Evalúa cada expectativa sobre las métricas; una métrica ausente no pasa"""
    results = {}
    for name, rule in expect.items():
        (kind, bound), = rule.items()
        value = metrics.get(name)
        if value is None:
            ok = False
        elif kind == "max":
            ok = value <= bound
        elif kind == "min":
            ok = value >= bound
        else:
            ok = value == bound
        results[name] = {"rule": kind, "bound": bound, "value": value, "pass": bool(ok)}
    return results


@dataclass
class RunReport:
    scenario: Scenario
    space_name: str
    metrics: Dict[str, Any]
    expectations: Dict[str, Dict[str, Any]]
    wall_time: float
    output_dir: str
    files: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e["pass"] for e in self.expectations.values())

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_EXPECTATION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": "distlab",
            "version": VERSION,
            "scenario": self.scenario.to_dict(),
            "scenario_sha256": self.scenario.sha256,
            "space": self.space_name,
            "experiment": self.scenario.experiment,
            "inputs": self.scenario.params,
            "metrics": self.metrics,
            "expectations": self.expectations,
            "pass": self.passed,
            "wall_time_s": self.wall_time,
            "files": self.files,
        }

    def summary(self) -> str:
        lines = [f"distlab {VERSION}: {self.scenario.experiment} sobre {self.space_name}"]
        for name, value in self.metrics.items():
            if isinstance(value, list):
                continue
            mark = ""
            if name in self.expectations:
                mark = "  [OK]" if self.expectations[name]["pass"] else "  [FALLA]"
            lines.append(f"  {name} = {value}{mark}")
        missing = [n for n in self.expectations if n not in self.metrics]
        lines.extend(f"  {n}: métrica inexistente  [FALLA]" for n in missing)
        lines.append("Resultado: " + ("todas las expectativas se cumplen" if self.passed else "expectativas fallidas"))
        return "\n".join(lines)


def resolve_output_dir(cli_out: Optional[str], scenario: Scenario) -> str:
    """--out > output_dir del escenario > DISTLAB_OUTPUT_DIR > ./distlab_out"""
    return cli_out or scenario.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR


def write_csv(frame: pd.DataFrame, path: str, scenario: Scenario) -> None:
    """CSV con una línea de procedencia (versión y hash del escenario) antes de la cabecera"""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# distlab {VERSION} scenario={scenario.sha256}\n")
        frame.to_csv(f, index=False, float_format="%.17g")


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(data: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_to_jsonable(data), f, indent=2, sort_keys=True, allow_nan=True)


def run(scenario: Scenario, out_dir: Optional[str] = None, seed: Optional[int] = None) -> RunReport:
    """
    Ejecuta un escenario y escribe sus artefactos

    Args:
        scenario (Scenario): Escenario validado
        out_dir (Optional[str]): Directorio de salida (tiene prioridad sobre el escenario)
        seed (Optional[int]): Semilla que sustituye a la del escenario

    Returns:
        RunReport: Métricas, expectativas evaluadas y ficheros escritos
    """
    scenario = copy.deepcopy(scenario)
    if seed is not None:
        scenario.params["seed"] = seed
    target = resolve_output_dir(out_dir, scenario)
    space = builtin_space(scenario.space)
    logger.info("Ejecutando %s sobre %s", scenario.experiment, space.name)

    start = time.perf_counter()
    result = EXPERIMENTS[scenario.experiment](space, scenario.params)
    elapsed = time.perf_counter() - start

    metrics = _to_jsonable(result.metrics)
    report = RunReport(scenario, space.name, metrics, judge(scenario.expect, metrics), elapsed, target)
    os.makedirs(target, exist_ok=True)
    for name, frame in result.tables.items():
        path = os.path.join(target, f"{name}.csv")
        write_csv(frame, path, scenario)
        report.files.append(path)
    write_json(report.to_dict(), os.path.join(target, "report.json"))
    logger.info("Artefactos escritos en %s", target)
    return report


def write_error(exc: Exception, scenario: Optional[Scenario], target: str) -> str:
    """Escribe error.json con la operación que falló y sus entradas"""
    data = exc.to_dict() if isinstance(exc, DistlabError) else {"error": type(exc).__name__, "message": str(exc)}
    data["version"] = VERSION
    if scenario is not None:
        data["experiment"] = scenario.experiment
        data["inputs"] = scenario.params
        data["scenario_sha256"] = scenario.sha256
    os.makedirs(target, exist_ok=True)
    path = os.path.join(target, "error.json")
    write_json(data, path)
    return path


# ---------------------------------------------------------------------------
# Línea de comandos
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distlab", description="Laboratorio numérico de espacios de distancia")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="Ejecuta un escenario")
    run_cmd.add_argument("scenario", help="Fichero JSON del escenario")
    run_cmd.add_argument("--out", default=None, help=f"Directorio de salida (por defecto ${OUTPUT_ENV} o ./{DEFAULT_OUTPUT_DIR})")
    run_cmd.add_argument("--seed", type=int, default=None, help="Sustituye la semilla del escenario")
    run_cmd.add_argument("--quiet", action="store_true", help="Solo avisos y errores en el log")

    validate_cmd = commands.add_parser("validate", help="Valida un escenario sin ejecutarlo")
    validate_cmd.add_argument("scenario", help="Fichero JSON del escenario")

    commands.add_parser("list-spaces", help="Espacios incluidos")
    commands.add_parser("list-experiments", help="Experimentos disponibles")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    if args.command == "list-spaces":
        for kind in SPACE_KINDS:
            print(kind)
        print("transformadas: " + ", ".join(sorted(TRANSFORMS)))
        return EXIT_OK
    if args.command == "list-experiments":
        for name in EXPERIMENTS:
            print(name)
        return EXIT_OK

    scenario = None
    try:
        scenario = load_scenario(args.scenario)
        if args.command == "validate":
            print(f"Escenario válido: {scenario.experiment} sobre {scenario.space['kind']}")
            return EXIT_OK
        report = run(scenario, args.out, args.seed)
    except ScenarioError as e:
        print(f"Escenario inválido: {e}", file=sys.stderr)
        if args.command == "run":
            write_error(e, scenario, args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR)
        return EXIT_ERROR
    except (DistlabError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        target = resolve_output_dir(args.out, scenario)
        path = write_error(e, scenario, target)
        print(f"Error de cálculo: {e} (detalles en {path})", file=sys.stderr)
        return EXIT_ERROR

    print(report.summary())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
