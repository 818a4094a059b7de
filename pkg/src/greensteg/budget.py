"""Parameter and per-pixel FLOP accounting for a fitted detector.

Two conventions are reported.  ``paper`` reproduces the published
arithmetic (1K parameters and 500 FLOPs per classifier, selected Saab taps
rounded up to the next thousand).  ``exact`` counts what the fitted model
actually stores and executes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import gbdt
from .saab import KERNEL_SIZES

PARAMS_PER_CLASSIFIER = 1000
FLOPS_PER_CLASSIFIER = 500
MATCHED_FILTER_FLOPS = 9 + 8
REFERENCE_INTERIOR = (250, 250)
REFERENCE_SAAB_PARAMS = 7364
REFERENCE_SAAB_FLOPS = 2512

PARAM_KEYS = ("saab_selected", "module1_classifiers", "module2_classifiers", "module3_classifiers")
FLOP_KEYS_PAPER = ("saab_selected", "module1_classifiers", "module2_matched_filter", "module2_classifier")
FLOP_KEYS_EXACT = ("patch_cost",) + FLOP_KEYS_PAPER + ("module3_amortized",)


def full_saab_params(groups: int) -> int:
    return sum(n ** 4 for n in KERNEL_SIZES) * groups


def full_saab_flops() -> int:
    return 2 * sum(n ** 4 for n in KERNEL_SIZES)


@dataclass
class ModelShape:
    """What the audit needs to know about a model."""

    group_count: int
    selected_sizes: List[List[int]]           # kernel size of every selected dim, per trained group
    module1: List[List[gbdt.GbdtModel]] = field(default_factory=list)  # per group: round-1 then round-2s
    module2: List[gbdt.GbdtModel] = field(default_factory=list)
    module3: List[gbdt.GbdtModel] = field(default_factory=list)
    n_module1: int = 0
    n_module2: int = 0
    n_module3: int = 0
    n_trees: int = 100
    max_depth: int = 2
    cost_window: int = 3
    interior: tuple = REFERENCE_INTERIOR
    saab_params_override: Optional[int] = None
    saab_flops_override: Optional[int] = None

    @classmethod
    def from_model(cls, model, interior=REFERENCE_INTERIOR) -> "ModelShape":
        m1 = []
        sizes = []
        for g in model.group1:
            if g is None:
                continue
            ks = g.saab.kernel_sizes[g.selected]
            sizes.append([int(k) for k in ks])
            m1.append([g.round1] + [r for r in g.round2 if r is not None])
        m2 = [g.classifier for g in model.group2 if g is not None]
        m3 = list(model.fusion.classifiers)
        return cls(model.group_count, sizes, m1, m2, m3, sum(len(x) for x in m1), len(m2), len(m3),
                   model.group_spec.cost_window, tuple(interior))


def reference_shape() -> ModelShape:
    """Ten groups, 15 selected dims, 1 + 10 classifiers per group, 10 spot and 5 fusion classifiers.

    The per-group selection is not known in closed form, so the published
    selected-filter totals are used as overrides.
    """
    return ModelShape(10, [], n_module1=10 * 11, n_module2=10, n_module3=5,
                      saab_params_override=REFERENCE_SAAB_PARAMS, saab_flops_override=REFERENCE_SAAB_FLOPS)


@dataclass
class BudgetReport:
    convention: str
    params: Dict[str, float]
    flops_per_pixel: Dict[str, float]
    params_summed: Sequence[str] = PARAM_KEYS
    flops_summed: Sequence[str] = FLOP_KEYS_PAPER

    @property
    def module1_params(self) -> float:
        return self.params["saab_selected"] + self.params["module1_classifiers"]

    @property
    def module1_flops(self) -> float:
        return self.flops_per_pixel["saab_selected"] + self.flops_per_pixel["module1_classifiers"]

    @property
    def module2_flops(self) -> float:
        return self.flops_per_pixel["module2_matched_filter"] + self.flops_per_pixel["module2_classifier"]

    def key_values(self) -> str:
        lines = [f"convention={self.convention}"]
        lines += [f"params.{k}={_fmt(v)}" for k, v in self.params.items()]
        lines += [f"flops.{k}={_fmt(v)}" for k, v in self.flops_per_pixel.items()]
        lines += [f"params.module1={_fmt(self.module1_params)}",
                  f"flops.module1={_fmt(self.module1_flops)}",
                  f"flops.module2={_fmt(self.module2_flops)}"]
        return "\n".join(lines)

    def markdown(self) -> str:
        p, f = self.params, self.flops_per_pixel
        rows = [
            ("Module 1", self.module1_params, self.module1_flops),
            ("Module 2", p["module2_classifiers"], self.module2_flops),
            ("Module 3", p["module3_classifiers"], f["module3_amortized"]),
            ("Total", p["total"], f["total"]),
        ]
        out = [f"| Component ({self.convention}) | Params | FLOPs/pixel |", "|---|---:|---:|"]
        out += [f"| {name} | {_fmt(a)} | {_fmt(b)} |" for name, a, b in rows]
        out.append(f"| Full Saab banks (not used) | {_fmt(p['saab_full'])} | {_fmt(f['saab_full'])} |")
        summed = "summed" if "patch_cost" in self.flops_summed else "not summed"
        out.append(f"| Patch cost ({summed}) | | {_fmt(f['patch_cost'])} |")
        return "\n".join(out)


def _fmt(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def full_tree_params(n_trees: int = 100, depth: int = 2) -> int:
    """Parameters of ``n_trees`` complete trees, counted like ``gbdt.count_params``."""
    return n_trees * (2 * (2 ** depth - 1) + 2 ** depth) + 1


def full_tree_flops(n_trees: int = 100, depth: int = 2) -> int:
    """Worst-case comparisons plus additions, counted like ``gbdt.count_flops_exact``."""
    return n_trees * depth + n_trees


def _check(convention: str):
    if convention not in ("paper", "exact"):
        raise ValueError("convention must be 'paper' or 'exact'")


def _selected_taps(shape: ModelShape) -> int:
    if shape.saab_params_override is not None:
        return shape.saab_params_override
    return sum(n * n for sizes in shape.selected_sizes for n in sizes)


def audit_params(shape: ModelShape, convention: str = "paper") -> Dict[str, float]:
    _check(convention)
    taps = _selected_taps(shape)
    if convention == "paper":
        out = {
            "saab_selected": PARAMS_PER_CLASSIFIER * math.ceil(taps / PARAMS_PER_CLASSIFIER),
            "module1_classifiers": PARAMS_PER_CLASSIFIER * shape.n_module1,
            "module2_classifiers": PARAMS_PER_CLASSIFIER * shape.n_module2,
            "module3_classifiers": PARAMS_PER_CLASSIFIER * shape.n_module3,
        }
    elif shape.module1 or shape.module2 or shape.module3:
        out = {
            "saab_selected": taps,
            "module1_classifiers": sum(gbdt.count_params(m) for ms in shape.module1 for m in ms),
            "module2_classifiers": sum(gbdt.count_params(m) for m in shape.module2),
            "module3_classifiers": sum(gbdt.count_params(m) for m in shape.module3),
        }
    else:
        # shape without fitted models: assume complete trees
        full = full_tree_params(shape.n_trees, shape.max_depth)
        out = {
            "saab_selected": taps,
            "module1_classifiers": full * shape.n_module1,
            "module2_classifiers": full * shape.n_module2,
            "module3_classifiers": full * shape.n_module3,
        }
    out["saab_full"] = full_saab_params(shape.group_count)
    out["saab_selected_taps"] = taps
    out["total"] = sum(out[k] for k in PARAM_KEYS)
    return out


def _selected_flops(shape: ModelShape, convention: str) -> float:
    if shape.saab_flops_override is not None:
        return shape.saab_flops_override
    if not shape.selected_sizes:
        return 0
    if convention == "paper":
        # a pixel visits one group; charge the most expensive one
        return max(sum(2 * n * n for n in sizes) for sizes in shape.selected_sizes)
    per_group = [sum(2 * n * n - 1 for n in sizes) for sizes in shape.selected_sizes]
    return sum(per_group) / len(per_group)


def audit_flops(shape: ModelShape, convention: str = "paper") -> Dict[str, float]:
    _check(convention)
    area = shape.interior[0] * shape.interior[1]
    if convention == "paper":
        out = {
            "patch_cost": shape.cost_window ** 2,
            "saab_selected": _selected_flops(shape, convention),
            "module1_classifiers": FLOPS_PER_CLASSIFIER if shape.n_module1 else 0,
            "module2_matched_filter": MATCHED_FILTER_FLOPS if shape.n_module2 else 0,
            "module2_classifier": FLOPS_PER_CLASSIFIER if shape.n_module2 else 0,
            "module3_amortized": FLOPS_PER_CLASSIFIER * shape.n_module3 / area,
        }
    elif not (shape.module1 or shape.module2 or shape.module3):
        full = full_tree_flops(shape.n_trees, shape.max_depth)
        out = {
            "patch_cost": shape.cost_window ** 2,
            "saab_selected": _selected_flops(shape, convention),
            "module1_classifiers": 2 * full if shape.n_module1 else 0,
            "module2_matched_filter": MATCHED_FILTER_FLOPS if shape.n_module2 else 0,
            "module2_classifier": full if shape.n_module2 else 0,
            "module3_amortized": full * shape.n_module3 / area,
        }
    else:
        # worst case: round-1 plus the most expensive round-2 model of the group
        m1 = [gbdt.count_flops_exact(ms[0]) + max([gbdt.count_flops_exact(m) for m in ms[1:]], default=0)
              for ms in shape.module1]
        out = {
            "patch_cost": shape.cost_window ** 2,
            "saab_selected": _selected_flops(shape, convention),
            "module1_classifiers": max(m1, default=0),
            "module2_matched_filter": MATCHED_FILTER_FLOPS if shape.module2 else 0,
            "module2_classifier": max((gbdt.count_flops_exact(m) for m in shape.module2), default=0),
            "module3_amortized": sum(gbdt.count_flops_exact(m) for m in shape.module3) / area,
        }
    out["saab_full"] = full_saab_flops()
    keys = FLOP_KEYS_PAPER if convention == "paper" else FLOP_KEYS_EXACT
    out["total"] = sum(out[k] for k in keys)
    return out


def audit(shape: ModelShape, convention: str = "paper") -> BudgetReport:
    keys = FLOP_KEYS_PAPER if convention == "paper" else FLOP_KEYS_EXACT
    return BudgetReport(convention, audit_params(shape, convention), audit_flops(shape, convention),
                        PARAM_KEYS, keys)
