# errors.py
# Fehlerhierarchie des Pakets. Eingabefehler erben zusätzlich von ValueError,
# numerische Fehler von RuntimeError; die CLI bildet beide auf Exit-Codes ab.

from __future__ import annotations


class SkewNormError(Exception):
    """Basisklasse aller Fehler dieses Pakets."""


# ─── Eingabefehler (Exit-Code 2) ───────────────────────────────────────────
class InvalidInputError(SkewNormError, ValueError):
    """Ungültige Argumente oder Daten."""


class DomainError(InvalidInputError):
    """Wert außerhalb des Definitionsbereichs (z. B. |δ| ≥ 1)."""


class InsufficientDataError(InvalidInputError):
    """Zu wenige Beobachtungen für die Operation."""


class DegenerateSampleError(InvalidInputError):
    """Stichprobe ohne Streuung."""


class EmptyInputError(InvalidInputError):
    """Keine verwertbaren Daten."""


class SeriesParseError(InvalidInputError):
    """Tabellarische Eingabe nicht lesbar; `line` ist 1-basiert (Kopfzeile = 1)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"Zeile {line}: {message}"
        super().__init__(message)


# ─── Numerische Fehler (Exit-Code 3) ───────────────────────────────────────
class NumericalFailureError(SkewNormError, RuntimeError):
    """Nicht-endliche Likelihood o. Ä.; `trace` enthält den bisherigen Iterationsverlauf."""

    def __init__(self, message: str, trace: list | None = None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)


class FoldFitError(NumericalFailureError):
    """Fehlgeschlagener Fit auf einem CV-Fold."""

    def __init__(self, message: str, fold: int, lam: float, trace: list | None = None):
        self.fold = fold
        self.lam = lam
        super().__init__(f"Fold {fold}, λ={lam:g}: {message}", trace)
