"""JSON model files.

Top-level keys: ``ell, m, n1, horizon, generator, rate, drift, vol,
jump_components, shock, delta``.  Each coefficient is a list with one table per
regime, a table being ``[{"t_from": 0.0, "value": ...}, ...]`` (a bare value is
accepted as a constant table).  ``jump_components`` is a list of
``{"atoms": [{"weight": w, "loading": [table per regime]}]}`` and ``shock`` maps
``"i,j"`` keys (regimes counted from 1) to tables of shape ``(m,)``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from regime_mv.errors import ModelError
from regime_mv.market_model import (DEFAULT_DELTA, Atom, JumpComponent, MarketModel,
                                    PiecewiseConstant)

KEYS = ("ell", "m", "n1", "horizon", "generator", "rate", "drift", "vol",
        "jump_components", "shock", "delta")
REQUIRED = KEYS[:8]


def _tables(doc: dict, key: str, ell: int, shape: tuple) -> tuple:
    raw = doc[key]
    if not isinstance(raw, list) or len(raw) != ell:
        raise ModelError(f"'{key}' must list one table per regime ({ell})")
    return tuple(PiecewiseConstant.from_records(tb, shape) for tb in raw)


def _shock_key(key: str, ell: int) -> tuple[int, int]:
    try:
        i, j = (int(part) for part in key.split(","))
    except ValueError:
        raise ModelError(f"shock key {key!r} is not of the form 'i,j'") from None
    if not (1 <= i <= ell and 1 <= j <= ell) or i == j:
        raise ModelError(f"shock key {key!r} out of range for {ell} regimes")
    return i - 1, j - 1


def model_from_dict(doc: dict[str, Any]) -> MarketModel:
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ModelError(f"model file lacks keys: {', '.join(missing)}")
    unknown = sorted(set(doc) - set(KEYS))
    if unknown:
        raise ModelError(f"unknown model keys: {', '.join(unknown)}")
    try:
        ell, m, n1 = int(doc["ell"]), int(doc["m"]), int(doc["n1"])
    except (TypeError, ValueError):
        raise ModelError("ell, m and n1 must be integers") from None
    comps = []
    for c, comp in enumerate(doc.get("jump_components", [])):
        atoms = []
        for atom in comp.get("atoms", []):
            atoms.append(Atom(float(atom["weight"]), _tables(atom, "loading", ell, (m,))))
        if not atoms:
            raise ModelError(f"jump component {c + 1} has no atoms")
        comps.append(JumpComponent(tuple(atoms)))
    shock = {}
    for key, tb in doc.get("shock", {}).items():
        shock[_shock_key(key, ell)] = PiecewiseConstant.from_records(tb, (m,))
    return MarketModel(
        ell=ell, m=m, n1=n1, horizon=float(doc["horizon"]), generator=doc["generator"],
        rate=_tables(doc, "rate", ell, ()),
        drift=_tables(doc, "drift", ell, (m,)),
        vol=_tables(doc, "vol", ell, (m, n1)),
        jump_components=tuple(comps), shock=shock,
        delta=float(doc.get("delta", DEFAULT_DELTA)),
    )


def model_to_dict(model: MarketModel) -> dict[str, Any]:
    return {
        "ell": model.ell,
        "m": model.m,
        "n1": model.n1,
        "horizon": model.horizon,
        "generator": model.generator.tolist(),
        "rate": [tb.to_records() for tb in model.rate],
        "drift": [tb.to_records() for tb in model.drift],
        "vol": [tb.to_records() for tb in model.vol],
        "jump_components": [
            {"atoms": [{"weight": a.weight, "loading": [tb.to_records() for tb in a.loading]}
                       for a in comp.atoms]}
            for comp in model.jump_components],
        "shock": {f"{i + 1},{j + 1}": tb.to_records() for (i, j), tb in sorted(model.shock.items())},
        "delta": model.delta,
    }


def loads(text: str) -> MarketModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelError("model file must hold a JSON object")
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ModelError(f"malformed model file: {exc!r}") from None


def dumps(model: MarketModel) -> str:
    return json.dumps(model_to_dict(model), indent=2)


def load_model(path: str | Path) -> MarketModel:
    return loads(Path(path).read_text())


def save_model(model: MarketModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model) + "\n")
