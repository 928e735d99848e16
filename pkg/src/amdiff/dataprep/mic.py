"""MIC strings to numbers, labels, and FICI synergy labels.

Operator rules for a recorded MIC:

    > V, >= V, ≥ V          ->  2 V
    ≫ V (or >> V)           ->  3 V
    Va - Vb, Va -> Vb,
    Va ->= Vb, Va - >= Vb,
    Va - => Vb              ->  (Va + Vb) / 2
    Va ± Vb (or +/-)        ->  Va
    any other prefix
    (<, <=, ≤, =, ~) or none ->  V

The activity label is -log10(MIC / 10), MIC in µM.
"""

import math
import re
from dataclasses import dataclass

from ..errors import DataError, NonpositiveMIC, UnparseableRecord

_NUM = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_DOUBLE = re.compile(rf"^(?:>=|=>|≥|>)({_NUM})$")
_TRIPLE = re.compile(rf"^(?:≫|>>)({_NUM})$")
_RANGE = re.compile(rf"^({_NUM})(?:->=|-=>|->|-)({_NUM})$")
_PLUSMINUS = re.compile(rf"^({_NUM})(?:±|\+/-|\+-)({_NUM})$")
_KEEP = re.compile(rf"^(?:<=|=<|≤|<|=|~)?({_NUM})$")


def parse_mic(raw):
    """Apply the operator rules to a recorded MIC string; returns a float."""
    if not isinstance(raw, str):
        raise UnparseableRecord(f"MIC must be text, got {type(raw).__name__}")
    s = re.sub(r"\s+", "", raw)
    if m := _TRIPLE.match(s):
        v = 3 * float(m[1])
    elif m := _DOUBLE.match(s):
        v = 2 * float(m[1])
    elif m := _RANGE.match(s):
        v = (float(m[1]) + float(m[2])) / 2
    elif m := _PLUSMINUS.match(s):
        v = float(m[1])
    elif m := _KEEP.match(s):
        v = float(m[1])
    else:
        raise UnparseableRecord(f"cannot read MIC {raw!r}")
    if not math.isfinite(v):
        raise UnparseableRecord(f"MIC {raw!r} is not finite")
    return v


def mic_to_label(value):
    if not value > 0:
        raise NonpositiveMIC(f"MIC must be positive, got {value}")
    return 0.0 - math.log10(value / 10)


def binarize_fici(fici):
    """1 (synergy) when FICI < 0.5, else 0."""
    if not fici >= 0:
        raise DataError(f"FICI must be non-negative, got {fici}")
    return 1 if fici < 0.5 else 0


_MOLAR = {"µm": 1.0, "um": 1.0, "μm": 1.0, "µmol": 1.0, "umol": 1.0, "μmol": 1.0,
          "µmol/l": 1.0, "umol/l": 1.0, "μmol/l": 1.0, "nm": 1e-3, "mm": 1e3}
_MASS = {"µg/ml": 1.0, "ug/ml": 1.0, "μg/ml": 1.0, "mg/l": 1.0, "mg/ml": 1e3, "ng/ml": 1e-3}


def needs_mol_weight(unit):
    return unit.strip().lower().replace(" ", "") in _MASS


def split_unit(raw):
    """'>4 µmol' -> ('>4', 'µmol'). The unit is None when the text ends in a digit."""
    m = re.match(r"^(.*?\d\.?)\s*([^\d\s.][^\d]*)$", raw.strip())
    if m and m[2].strip().lower().replace(" ", "") in {**_MOLAR, **_MASS}:
        return m[1], m[2].strip()
    return raw, None


def to_micromolar(value, unit, mol_weight=None):
    """Convert a concentration to µM; mass units need the molecular weight (g/mol)."""
    u = unit.strip().lower().replace(" ", "")
    if u in _MOLAR:
        return value * _MOLAR[u]
    if u in _MASS:
        if mol_weight is None or not mol_weight > 0:
            raise UnparseableRecord(f"unit {unit!r} needs a molecular weight")
        # µg/mL = mg/L; mg/L / (g/mol) = mmol/m^3 = µM
        return value * _MASS[u] * 1000.0 / mol_weight
    raise UnparseableRecord(f"unknown concentration unit {unit!r}")


@dataclass
class MicRecord:
    raw: str
    unit: str = "µM"
    mol_weight: float = None

    @property
    def value_umol(self):
        return to_micromolar(parse_mic(self.raw), self.unit, self.mol_weight)

    @property
    def label(self):
        return mic_to_label(self.value_umol)
