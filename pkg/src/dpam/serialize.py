"""Deterministic JSON documents for models, plans and manifests.

Floats are written with 17 significant digits so every value survives a
write/read cycle bit for bit, and the writer is fully deterministic
(insertion-ordered keys, fixed indentation, trailing newline).
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .model import AdditiveFit, ComponentClass, ComponentFit, InvalidInputError, Rule
from .solver import PenaltyPlan

FORMAT = "dpam-model"
FORMAT_VERSION = 1


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def _emit(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fmt_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, val) in enumerate(obj.items()):
            out.append(pad + json.dumps(str(key), ensure_ascii=False) + ": ")
            _emit(val, indent, level + 1, out)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            out.append("[]")
        elif all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
                 for v in items):
            # numeric arrays on one line keep documents compact
            parts = []
            for v in items:
                sub = []
                _emit(v, indent, level + 1, sub)
                parts.append("".join(sub))
            out.append("[" + ", ".join(parts) + "]")
        else:
            out.append("[\n")
            for k, val in enumerate(items):
                out.append(pad)
                _emit(val, indent, level + 1, out)
                out.append(",\n" if k < len(items) - 1 else "\n")
            out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out = []
    _emit(obj, indent, 0, out)
    return "".join(out) + "\n"


def loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed document: {exc}") from exc


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def component_to_doc(j: int, name, comp: ComponentFit | None, cls: ComponentClass):
    doc = {"index": j, "name": name, "class": cls.label, "approximate": cls.approximate}
    if comp is None:
        doc["active"] = False
        return doc
    doc.update({
        "active": True,
        "rule": comp.rule.value,
        "knots": comp.knots,
        "values": comp.values,
        "multiplicities": comp.multiplicities,
        "seminorm": comp.seminorm_value,
        "empnorm": comp.empnorm_value,
    })
    if comp.curvature is not None:
        doc["curvature"] = comp.curvature
    return doc


def model_to_doc(fit: AdditiveFit, plan: PenaltyPlan, extra: dict | None = None) -> dict:
    names = fit.column_names or tuple(f"x{j}" for j in range(fit.p))
    doc = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "intercept": fit.intercept,
        "column_names": list(names),
        "components": [component_to_doc(j, names[j], c, plan.classes[j])
                       for j, c in enumerate(fit.components)],
        "fit": {
            "sweeps": fit.sweeps,
            "converged": fit.converged,
            "objective_trace": list(fit.objective_trace),
        },
        "plan": plan.to_dict(),
    }
    if extra:
        doc.update(extra)
    return doc


def doc_to_model(doc: dict):
    """``(AdditiveFit, PenaltyPlan)`` from a model document."""
    if doc.get("format") != FORMAT:
        raise InvalidInputError("not a model document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model format version {doc.get('format_version')}")
    plan = PenaltyPlan.from_dict(doc["plan"])
    comps = []
    for c in doc["components"]:
        if not c.get("active"):
            comps.append(None)
            continue
        cls = ComponentClass.parse(c["class"])
        comps.append(ComponentFit(
            knots=np.asarray(c["knots"], dtype=np.float64),
            values=np.asarray(c["values"], dtype=np.float64),
            rule=Rule(c["rule"]),
            multiplicities=np.asarray(c["multiplicities"], dtype=np.float64),
            seminorm_value=float(c["seminorm"]),
            empnorm_value=float(c["empnorm"]),
            cls=cls,
            curvature=None if "curvature" not in c else np.asarray(c["curvature"], dtype=np.float64),
        ))
    fitdoc = doc.get("fit", {})
    fit = AdditiveFit(
        intercept=float(doc["intercept"]),
        components=tuple(comps),
        objective_trace=tuple(fitdoc.get("objective_trace", ())),
        sweeps=int(fitdoc.get("sweeps", 0)),
        converged=bool(fitdoc.get("converged", False)),
        plan_snapshot=plan,
        column_names=tuple(doc["column_names"]),
    )
    return fit, plan
