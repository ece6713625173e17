"""Aligned text tables for fidelity, utility and attack results."""

from __future__ import annotations

from typing import Mapping, Sequence

from .attacks import AttackReport
from .fidelity import FidelityReport
from .utility import UtilityRow


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


def fidelity_table(reports: Mapping[str, FidelityReport]) -> str:
    """One row per model: aggregate EMD and mixed distance."""
    rows = [[name, f"{r.aggregate_emd:.4f}", f"{r.distance:.4f}"] for name, r in reports.items()]
    return _table(["model", "EMD", "Distance"], rows)


def utility_table(rows: Sequence[UtilityRow]) -> str:
    out = []
    for r in rows:
        for m in ("accuracy", "precision", "recall", "f1"):
            out.append([r.kind, m, f"{r.baseline[m]:.4f}", f"{r.tstr[m]:.4f}", f"{r.gap[m]:+.4f}"])
    return _table(["classifier", "metric", "real", "synthetic", "gap"], out)


def _setting(rep: AttackReport) -> str:
    p = rep.params
    if rep.attack == "reidentification":
        return f"f={p['overlap']:.2f}"
    if rep.attack == "membership_inference":
        return p["setting"]
    return f"{p['sensitive']}->{p['target']}"


def attack_table(reports: Sequence[AttackReport]) -> str:
    rows = [[r.attack, _setting(r), f"{r.success:.4f}", f"{r.baseline:.4f}", str(r.n)] for r in reports]
    return _table(["attack", "setting", "success", "baseline", "n"], rows)
