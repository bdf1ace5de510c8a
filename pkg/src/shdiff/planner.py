"""Schedule threshold, adaptive node selection, and plan compilation.

The planner turns an embedding tree into an explicit per-step execution plan:
which tree nodes are evaluated at each diffusion step, which earlier state
each newly active node inherits, and how many denoiser evaluations the plan
needs versus the K*N baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DataError, UsageError
from .tree import EmbeddingTree, path_to_root

FRESH = "FRESH"

PHI_MAIN = "main"
PHI_APPENDIX = "appendix"


@dataclass(frozen=True)
class ScheduleParams:
    K: int
    tau: float
    phi_variant: str = PHI_MAIN

    def __post_init__(self):
        if self.K < 1:
            raise UsageError("K must be >= 1")
        if self.tau < 0:
            raise UsageError("tau must be >= 0")
        if self.phi_variant not in (PHI_MAIN, PHI_APPENDIX):
            raise UsageError(f"unknown phi variant {self.phi_variant!r}")


def phi(k: int, params: ScheduleParams) -> float:
    """Heterogeneity threshold at step k; decreases linearly to 0.

    The main variant is tau * (1 - k/K).  The appendix variant spaces the K
    values evenly over [tau, 0], i.e. tau * (K-k)/(K-1).
    """
    if not 1 <= k <= params.K:
        raise UsageError(f"step {k} outside 1..{params.K}")
    if params.phi_variant == PHI_MAIN:
        return params.tau * (1.0 - k / params.K)
    if params.K == 1:
        return 0.0
    return params.tau * (params.K - k) / (params.K - 1)


@dataclass(frozen=True)
class PlanStep:
    k: int
    active: frozenset[int]
    inherit: dict[int, int | str]  # node -> source node active at k-1, or FRESH


@dataclass(frozen=True)
class SharePlan:
    K: int
    tau: float
    phi_variant: str
    steps: tuple[PlanStep, ...]
    assignment: dict[str, tuple[int, ...]]  # prompt id -> node id per step
    total_evaluations: int
    baseline_evaluations: int
    savings_fraction: float


def _select_on_path(path_root_first: list, scores: list[float], phi_k: float) -> int:
    """Index into the root-first path of the selected node.

    A node is eligible when its parent's score is >= phi_k (the root's
    virtual parent has score +inf).  Scores are monotone non-increasing
    toward the leaf, so eligibility is a prefix of the path; the selected
    node is the shallowest one attaining the minimal eligible score.
    """
    best_i = 0
    best_score = scores[0]
    parent_score = float("inf")
    for i, s in enumerate(scores):
        if parent_score < phi_k:
            break
        if s < best_score:
            best_i, best_score = i, s
        parent_score = s
    return best_i


def select_node(tree: EmbeddingTree, prompt_id: str, k: int, params: ScheduleParams) -> int:
    """Tree node whose mean embedding conditions step k for this prompt."""
    path = list(reversed(path_to_root(tree, prompt_id)))  # root first
    scores = [tree.node(n).score for n in path]
    return path[_select_on_path(path, scores, phi(k, params))]


def compile_plan(
    tree: EmbeddingTree,
    params: ScheduleParams,
    ablation_tree: EmbeddingTree | None = None,
) -> SharePlan:
    """Compile the full per-step assignment, active sets, and inherit edges.

    With an ablation tree, selection runs on the ablation tree's structure
    and scores (its node ids populate the plan); generation embeddings are
    later taken from real leaf means via shared membership (see tree.reembed).
    """
    sel_tree = tree
    if ablation_tree is not None:
        if set(ablation_tree.leaf_of) != set(tree.leaf_of):
            raise UsageError("ablation tree prompt ids do not match")
        sel_tree = ablation_tree
    prompt_ids = sorted(sel_tree.leaf_of)
    k_count = params.K
    assignment: dict[str, tuple[int, ...]] = {}
    phis = [phi(k, params) for k in range(1, k_count + 1)]
    for pid in prompt_ids:
        path = list(reversed(path_to_root(sel_tree, pid)))
        scores = [sel_tree.node(n).score for n in path]
        assignment[pid] = tuple(path[_select_on_path(path, scores, p)] for p in phis)
    steps: list[PlanStep] = []
    prev_active: frozenset[int] = frozenset()
    total = 0
    for ki in range(k_count):
        active = frozenset(assignment[pid][ki] for pid in prompt_ids)
        inherit: dict[int, int | str] = {}
        for node in active:
            if ki == 0:
                inherit[node] = FRESH
            else:
                cur: int | None = node
                while cur is not None and cur not in prev_active:
                    cur = sel_tree.node(cur).parent
                if cur is None:
                    raise DataError(f"no active ancestor for node {node} at step {ki + 1}")
                inherit[node] = cur
        steps.append(PlanStep(k=ki + 1, active=active, inherit=inherit))
        prev_active = active
        total += len(active)
    baseline = k_count * len(prompt_ids)
    return SharePlan(
        K=k_count,
        tau=params.tau,
        phi_variant=params.phi_variant,
        steps=tuple(steps),
        assignment=assignment,
        total_evaluations=total,
        baseline_evaluations=baseline,
        savings_fraction=1.0 - total / baseline,
    )


def savings_report(plan: SharePlan) -> dict:
    """Pure summary of a compiled plan."""
    per_step = [len(s.active) for s in plan.steps]
    depth_used = 0
    # Depth proxy: longest inherit chain is bounded by tree depth; report the
    # largest number of distinct nodes any prompt visits.
    for nodes in plan.assignment.values():
        depth_used = max(depth_used, len(set(nodes)))
    return {
        "per_step_active_counts": per_step,
        "total": plan.total_evaluations,
        "baseline": plan.baseline_evaluations,
        "savings_fraction": plan.savings_fraction,
        "max_tree_depth_used": depth_used,
    }


def plan_to_json(plan: SharePlan) -> str:
    doc = {
        "K": plan.K,
        "tau": plan.tau,
        "phi_variant": plan.phi_variant,
        "assignment": [
            {"id": pid, "nodes": list(nodes)} for pid, nodes in sorted(plan.assignment.items())
        ],
        "steps": [
            {
                "k": s.k,
                "active": sorted(s.active),
                "inherit": {str(n): src for n, src in sorted(s.inherit.items())},
            }
            for s in plan.steps
        ],
        "total_evaluations": plan.total_evaluations,
        "baseline_evaluations": plan.baseline_evaluations,
        "savings_fraction": plan.savings_fraction,
    }
    return json.dumps(doc, indent=1)


def plan_from_json(text: str) -> SharePlan:
    try:
        doc = json.loads(text)
        steps = tuple(
            PlanStep(
                k=int(s["k"]),
                active=frozenset(int(n) for n in s["active"]),
                inherit={
                    int(n): (src if src == FRESH else int(src))
                    for n, src in s["inherit"].items()
                },
            )
            for s in doc["steps"]
        )
        assignment = {rec["id"]: tuple(rec["nodes"]) for rec in doc["assignment"]}
        return SharePlan(
            K=int(doc["K"]),
            tau=float(doc["tau"]),
            phi_variant=doc["phi_variant"],
            steps=steps,
            assignment=assignment,
            total_evaluations=int(doc["total_evaluations"]),
            baseline_evaluations=int(doc["baseline_evaluations"]),
            savings_fraction=float(doc["savings_fraction"]),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise DataError(f"malformed plan JSON: {e}") from e
