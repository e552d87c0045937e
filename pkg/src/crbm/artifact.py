"""Mapping between offline results and CRBM container sections.

Section names (``<part>`` is ``b``, ``theta_n`` or ``theta_tau``)::

    config                               run configuration text
    snapshots/mu, snapshots/U, snapshots/k_cv
    basis/Z, basis/singular_values
    reduced/<array>                      parameter-independent reduced arrays
    contact/<field>                      reference contact quadrature data
    eim/<part>/{kind, part, support_rows, support_cols, terms, indices, entry_addresses (u32),
                Q, training_log, train_curve, scale, reduced_terms}
    eim/<part>/evaluator/{elements, dofs, local_dofs, flat_index, target}
"""

from __future__ import annotations

import numpy as np

from .bench import HertzConfig
from .eim import AffineExpansion, EimDecomposition, EntryEvaluator, ReducedModel
from .fem import ContactPoints, OperatorRows
from .nitsche import ContactData, SolveResult, ray_gap
from .rom import ReducedBasis
from .workflow import HfRun, OfflineResult

_REDUCED_ARRAYS = ("lift", "K_N", "C_N", "K_lift", "C_lift", "M_N", "L_N", "M_lift", "L_lift",
                   "train_mus", "train_coeffs")
_REDUCED_SCALARS = ("lift_M_lift", "lift_L_lift", "char_length")
_POINT_FIELDS = ("element", "dofs", "values", "grads", "weights", "points", "normals")
_ROW_FIELDS = ("sigma_nn", "sigma_ntau", "v_n", "v_tau")
_EVAL_FIELDS = ("elements", "dofs", "local_dofs", "flat_index", "target")


def offline_sections(off: OfflineResult, config_text: str) -> dict[str, object]:
    red = off.reduced
    out: dict[str, object] = {"config": config_text}
    out["snapshots/mu"] = np.array([r.mu for r in off.runs])
    out["snapshots/U"] = np.array([r.result.U_cv for r in off.runs])
    out["snapshots/k_cv"] = np.array([r.result.k_cv for r in off.runs], dtype=np.int64)
    out["basis/Z"] = off.basis.Z
    out["basis/singular_values"] = off.basis.singular_values
    for name in _REDUCED_ARRAYS:
        out[f"reduced/{name}"] = getattr(red, name)
    for name in _REDUCED_SCALARS:
        out[f"reduced/{name}"] = np.array(float(getattr(red, name)))
    data = red.data_ref
    for name in _POINT_FIELDS:
        out[f"contact/{name}"] = getattr(data.points, name)
    for name in _ROW_FIELDS:
        out[f"contact/rows/{name}"] = getattr(data.rows, name)
    out["contact/gamma"] = np.array(data.gamma)
    out["contact/gap"] = data.gap
    for part, exp in red.expansions.items():
        d = exp.decomp
        key = f"eim/{part}"
        out[f"{key}/kind"] = d.kind
        out[f"{key}/part"] = exp.part
        out[f"{key}/support_rows"] = d.support_rows
        if d.support_cols is not None:
            out[f"{key}/support_cols"] = d.support_cols
        out[f"{key}/terms"] = d.terms
        out[f"{key}/indices"] = d.indices
        out[f"{key}/entry_addresses"] = d.entry_addresses().astype(np.uint32)
        out[f"{key}/Q"] = d.Q
        out[f"{key}/training_log"] = np.asarray(d.training_log, dtype=float)
        if part in off.train_curves:
            out[f"{key}/train_curve"] = off.train_curves[part]
        out[f"{key}/scale"] = np.array(float(d.scale))
        out[f"{key}/reduced_terms"] = exp.reduced_terms
        for name in _EVAL_FIELDS:
            out[f"{key}/evaluator/{name}"] = getattr(exp.evaluator, name)
    return out


def eim_parts(sections: dict) -> list[str]:
    return sorted({k.split("/")[1] for k in sections if k.startswith("eim/")},
                  key=lambda p: ("b", "theta_n", "theta_tau").index(p))


def load_decomposition(sections: dict, part: str) -> EimDecomposition:
    key = f"eim/{part}"
    return EimDecomposition(
        kind=sections[f"{key}/kind"],
        support_rows=sections[f"{key}/support_rows"],
        support_cols=sections.get(f"{key}/support_cols"),
        terms=sections[f"{key}/terms"],
        indices=sections[f"{key}/indices"],
        Q=sections[f"{key}/Q"],
        training_log=list(sections[f"{key}/training_log"]),
        scale=float(sections[f"{key}/scale"]),
    )


def load_basis(sections: dict) -> ReducedBasis:
    return ReducedBasis(sections["basis/Z"], sections["basis/singular_values"])


def load_reduced_model(sections: dict, hertz: HertzConfig) -> ReducedModel:
    """Rebuild the online model; the mesh and full-order operators are not needed."""
    points = ContactPoints(*(sections[f"contact/{n}"] for n in _POINT_FIELDS))
    rows = OperatorRows(*(sections[f"contact/rows/{n}"] for n in _ROW_FIELDS))
    data = ContactData(points, rows, float(sections["contact/gamma"]), sections["contact/gap"])
    expansions = {}
    for part in eim_parts(sections):
        d = load_decomposition(sections, part)
        key = f"eim/{part}/evaluator"
        ev = EntryEvaluator(d.kind, *(sections[f"{key}/{n}"] for n in _EVAL_FIELDS), d.S)
        expansions[part] = AffineExpansion(d, sections[f"eim/{part}/reduced_terms"], ev,
                                           sections[f"eim/{part}/part"])

    def gap_fn(mu, elements):
        return ray_gap(points.points[elements] * mu, points.normals[elements], hertz.obstacle(mu))

    model = ReducedModel(
        Z=sections["basis/Z"],
        **{n: sections[f"reduced/{n}"] for n in _REDUCED_ARRAYS},
        **{n: float(sections[f"reduced/{n}"]) for n in _REDUCED_SCALARS},
        friction=hertz.friction,
        expansions=expansions,
        data_ref=data,
        gap_fn=gap_fn,
    )
    model.prepare()
    return model


def load_offline(sections: dict, model, sets, solver, eim_config) -> OfflineResult:
    """Offline result backed by a rebuilt HF model; snapshot iterates other than ``U_cv`` are not stored."""
    runs = [HfRun(float(mu), SolveResult(U, int(k), True, [U], []))
            for mu, U, k in zip(sections["snapshots/mu"], sections["snapshots/U"], sections["snapshots/k_cv"])]
    parts = eim_parts(sections)
    decomps = {p: load_decomposition(sections, p) for p in parts}
    curves = {p: sections[f"eim/{p}/train_curve"] for p in parts if f"eim/{p}/train_curve" in sections}
    reduced = load_reduced_model(sections, model.config)
    return OfflineResult(model, sets, runs, load_basis(sections), decomps, reduced, eim_config, solver, curves)
