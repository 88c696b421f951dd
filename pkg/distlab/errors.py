"""
Excepciones de distlab.

Todas heredan de DistlabError para que la línea de comandos pueda distinguir
un fallo de cálculo de cualquier otro error de Python.
"""

from typing import Any, Dict, Optional


class DistlabError(Exception):
    """Error base de distlab"""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context: Dict[str, Any] = context

    def to_dict(self) -> Dict[str, Any]:
        """Convierte el error a un diccionario serializable a JSON"""
        return {
            "error": type(self).__name__,
            "message": str(self),
            "context": {k: _jsonable(v) for k, v in self.context.items()},
        }


class DimensionError(DistlabError, ValueError):
    """Un punto no tiene la dimensión del espacio o contiene valores no finitos"""


class InvalidFieldError(DistlabError):
    """La función de distancia devolvió un valor no finito o negativo"""


class NondifferentiablePointError(DistlabError):
    """Se pidió una derivada sobre la diagonal a = b"""


class BracketError(DistlabError):
    """No se encontró un intervalo que contenga la raíz radial"""


class NonMonotoneRadialError(DistlabError):
    """El perfil radial s -> rho(a, a + s u) no es estrictamente creciente"""


class DegenerateSphereError(DistlabError):
    """Esfera degenerada: gradiente nulo o polígono con vértices repetidos"""


class OsculationConvergenceError(DistlabError):
    """El resolvedor de osculación no convergió"""


class DegenerateOsculationError(DistlabError):
    """El hessiano proyectado no es definido positivo en la solución"""

    def __init__(self, message: str, solution: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.solution = solution


class NonUniqueOsculationError(DistlabError):
    """El multiarranque encontró más de un punto de osculación"""


class ExtrapolationDivergenceError(DistlabError):
    """La extrapolación de Richardson no converge (las derivadas de rho / r no están acotadas cerca de la diagonal)"""


class ScenarioError(DistlabError):
    """Fichero de escenario inválido"""


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)
