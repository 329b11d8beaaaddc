"""The attack loop: initialize, query, score, propose, accept-if-better.

One attack is strictly sequential. The clean image is queried once, an
initial random perturbation of k distinct search-space pixels is queried
once, and every loop iteration applies a freshly proposed k-pixel
perturbation to the CLEAN image (never cumulatively to the previous
adversarial image), queries it, and accepts iff the similarity is strictly
lower than the best so far. Query count is therefore N + 2 when nothing
terminates early.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .image_core import (GrayImage, PerturbModel, Toggle,
                         apply_perturbation, as_gray_image, psnr)
from .loss_metrics import MetricsRow, char_accuracy, cosine_similarity, success
from .optimizers import make_optimizer
from .region_select import Mode, SearchSpace, build_search_space
from .victim_oracle import BudgetExhausted, OcrOutput, OracleUnavailable

TRACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AttackConfig:
    mode: Mode = Mode.SKELETONIZED_AREA
    k: int = 20
    optimizer: str = "random"
    seed: int = 0
    iterations: int = 300
    threshold: int = 128
    perturb: PerturbModel = Toggle()
    optimizer_params: dict = field(default_factory=dict)
    # both off by default: the plain loop runs all N iterations and never
    # re-randomizes on stagnation
    early_stop_at_zero: bool = False
    stagnation_restart: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.stagnation_restart is not None and self.stagnation_restart < 1:
            raise ValueError("stagnation_restart must be >= 1 when set")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int  # 0 is the random initialization
    indices: tuple[int, ...]
    latex: str
    cosine: float
    accepted: bool
    timestamp_ms: float


@dataclass
class AttackTrace:
    image_id: str
    mode: Mode
    k: int
    optimizer: str
    seed: int
    iterations_requested: int
    space_size: int
    clean_latex: str
    ground_truth: str | None
    records: list[IterationRecord]
    final_indices: tuple[int, ...]
    final_latex: str
    adversarial_image: GrayImage
    metrics: MetricsRow
    queries: int
    wall_time_ms: float
    truncated: bool = False
    error: str | None = None
    final_is_initialization: bool = False


def _perturbed(img: GrayImage, space: SearchSpace, indices, model: PerturbModel) -> GrayImage:
    coords = space.coords[np.unique(np.asarray(indices, dtype=np.int64))]
    return apply_perturbation(img, coords, model)


def run_attack(img: GrayImage, cfg: AttackConfig, oracle, image_id: str = "",
               ground_truth: str | None = None) -> AttackTrace:
    """Run the full accept-if-better loop against one image.

    Budget exhaustion or a mid-run oracle failure yields a truncated trace
    with the iterations completed so far; a failure before the clean image
    was transcribed propagates, since there is nothing to preserve.
    """
    img = as_gray_image(img)
    t0 = time.perf_counter()
    space = build_search_space(img, cfg.mode, cfg.threshold)
    if cfg.k > len(space):
        raise ValueError(f"k={cfg.k} exceeds search space of {len(space)} pixels")

    root_seq = np.random.SeedSequence(cfg.seed)
    init_seq, opt_seq, restart_seq = root_seq.spawn(3)
    init_rng = np.random.default_rng(init_seq)
    opt = make_optimizer(cfg.optimizer, cfg.k, len(space), opt_seq,
                         **cfg.optimizer_params)

    queries = 0
    clean: OcrOutput = oracle.query(img)  # may propagate: no trace exists yet
    queries += 1

    records: list[IterationRecord] = []
    truncated = False
    error: str | None = None

    def now_ms() -> float:
        return (time.perf_counter() - t0) * 1000.0

    init_indices = tuple(int(i) for i in np.sort(
        init_rng.choice(len(space), size=cfg.k, replace=False)))
    best_img = _perturbed(img, space, init_indices, cfg.perturb)
    best_indices = init_indices
    try:
        y_adv = oracle.query(best_img)
        queries += 1
        best_cos = cosine_similarity(clean.tokens, y_adv.tokens)
        best_latex = y_adv.latex
        records.append(IterationRecord(0, init_indices, y_adv.latex, best_cos,
                                       accepted=True, timestamp_ms=now_ms()))
        best_record = 0
        stagnant = 0

        for it in range(1, cfg.iterations + 1):
            if cfg.early_stop_at_zero and best_cos == 0.0:
                break
            candidate = opt.propose()
            cand_img = _perturbed(img, space, candidate, cfg.perturb)
            out = oracle.query(cand_img)
            queries += 1
            cos = cosine_similarity(clean.tokens, out.tokens)
            accepted = cos < best_cos
            if accepted:
                best_cos = cos
                best_img = cand_img
                best_latex = out.latex
                best_indices = tuple(int(i) for i in candidate)
                best_record = it
                stagnant = 0
            else:
                stagnant += 1
            opt.observe(candidate, cos)
            records.append(IterationRecord(it, tuple(int(i) for i in candidate),
                                           out.latex, cos, accepted, now_ms()))
            if cfg.stagnation_restart and stagnant >= cfg.stagnation_restart:
                opt = make_optimizer(cfg.optimizer, cfg.k, len(space),
                                     restart_seq.spawn(1)[0],
                                     **cfg.optimizer_params)
                stagnant = 0
    except (BudgetExhausted, OracleUnavailable) as e:
        truncated = True
        error = f"{type(e).__name__}: {e}"
        if not records:
            # not even the initialization was scored; fall back to the clean image
            best_cos = 1.0
            best_latex = clean.latex
            best_img = img.copy()
            best_indices = ()
            best_record = -1

    running = None  # accept rule implies the best-so-far loss never rises
    for r in records:
        if r.iteration > 0 and r.accepted:
            assert running is None or r.cosine < running
        if r.accepted:
            running = r.cosine if running is None else min(running, r.cosine)

    metrics = MetricsRow(
        cosine_similarity=best_cos,
        success=success(best_cos),
        accuracy=char_accuracy(clean.latex, best_latex),
        psnr=psnr(img, best_img),
    )
    return AttackTrace(
        image_id=image_id,
        mode=cfg.mode,
        k=cfg.k,
        optimizer=cfg.optimizer,
        seed=cfg.seed,
        iterations_requested=cfg.iterations,
        space_size=len(space),
        clean_latex=clean.latex,
        ground_truth=ground_truth,
        records=records,
        final_indices=best_indices,
        final_latex=best_latex,
        adversarial_image=best_img,
        metrics=metrics,
        queries=queries,
        wall_time_ms=(time.perf_counter() - t0) * 1000.0,
        truncated=truncated,
        error=error,
        final_is_initialization=(best_record == 0),
    )


@dataclass(frozen=True)
class AggregateRow:
    mode: str
    k: int
    optimizer: str
    n_images: int
    mean_cosine: float
    success_rate: float
    mean_accuracy: float
    mean_psnr: float
    mean_queries: float
    mean_wall_time_ms: float


def aggregate(traces: list[AttackTrace]) -> list[AggregateRow]:
    """Per-(mode, k, optimizer) means in the shape of the report tables."""
    cells: dict[tuple[str, int, str], list[AttackTrace]] = {}
    for tr in traces:
        cells.setdefault((Mode(tr.mode).value, tr.k, tr.optimizer), []).append(tr)
    rows = []
    for (mode, k, optimizer), group in sorted(cells.items()):
        rows.append(AggregateRow(
            mode=mode, k=k, optimizer=optimizer, n_images=len(group),
            mean_cosine=float(np.mean([t.metrics.cosine_similarity for t in group])),
            success_rate=float(np.mean([t.metrics.success for t in group])),
            mean_accuracy=float(np.mean([t.metrics.accuracy for t in group])),
            mean_psnr=float(np.mean([t.metrics.psnr for t in group])),
            mean_queries=float(np.mean([t.queries for t in group])),
            mean_wall_time_ms=float(np.mean([t.wall_time_ms for t in group])),
        ))
    return rows


@dataclass
class BatchResult:
    traces: list[AttackTrace]
    failures: list[tuple[str, str]]  # (cell description, error)

    @property
    def aggregates(self) -> list[AggregateRow]:
        return aggregate(self.traces)


def derive_cell_seed(master_seed: int, image_index: int, k: int, optimizer: str) -> int:
    """Per-cell seed that deliberately ignores the narrowing mode, so the
    mode comparison runs with identical budgets and seeds."""
    import zlib

    entropy = (master_seed, image_index, k, zlib.crc32(optimizer.encode()))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def run_batch(dataset, configs, oracle_factory, derive_seeds: bool = True) -> BatchResult:
    """Run every (image, config) cell sequentially; failed cells are
    recorded and the batch continues.

    With ``derive_seeds`` (default) each cell's seed is derived from the
    config seed, the image index, k, and the optimizer, so the grid is
    reproducible cell by cell and modes stay seed-aligned.
    """
    traces: list[AttackTrace] = []
    failures: list[tuple[str, str]] = []
    for image_index, item in enumerate(dataset):
        for cfg in configs:
            cell = f"{item.id}/{Mode(cfg.mode).value}/k{cfg.k}/{cfg.optimizer}"
            if derive_seeds:
                cfg = replace(cfg, seed=derive_cell_seed(
                    cfg.seed, image_index, cfg.k, cfg.optimizer))
            oracle = oracle_factory()
            try:
                traces.append(run_attack(item.image, cfg, oracle,
                                         image_id=item.id,
                                         ground_truth=item.ground_truth))
            except Exception as e:  # noqa: BLE001 - cell isolation is the contract
                failures.append((cell, f"{type(e).__name__}: {e}"))
            finally:
                close = getattr(oracle, "close", None)
                if close:
                    close()
    return BatchResult(traces=traces, failures=failures)


# ---------------------------------------------------------------------------
# Trace persistence (JSON lines, one record per iteration)
# ---------------------------------------------------------------------------


def write_trace_jsonl(trace: AttackTrace, path, adv_image_ref: str | None = None,
                      extra_header: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "type": "header",
        "version": TRACE_FORMAT_VERSION,
        "image_id": trace.image_id,
        "mode": Mode(trace.mode).value,
        "k": trace.k,
        "optimizer": trace.optimizer,
        "seed": trace.seed,
        "iterations_requested": trace.iterations_requested,
        "space_size": trace.space_size,
        "clean_latex": trace.clean_latex,
        "ground_truth": trace.ground_truth,
    }
    if extra_header:
        header.update(extra_header)
    lines = [json.dumps(header, sort_keys=True)]
    for r in trace.records:
        lines.append(json.dumps({
            "type": "iter",
            "iteration": r.iteration,
            "indices": list(r.indices),
            "latex": r.latex,
            "cosine": r.cosine,
            "accepted": r.accepted,
            "timestamp_ms": r.timestamp_ms,
        }, sort_keys=True))
    lines.append(json.dumps({
        "type": "final",
        "indices": list(trace.final_indices),
        "latex": trace.final_latex,
        "cosine": trace.metrics.cosine_similarity,
        "success": trace.metrics.success,
        "accuracy": trace.metrics.accuracy,
        "psnr": trace.metrics.psnr,
        "queries": trace.queries,
        "wall_time_ms": trace.wall_time_ms,
        "truncated": trace.truncated,
        "error": trace.error,
        "final_is_initialization": trace.final_is_initialization,
        "adversarial_image": adv_image_ref,
    }, sort_keys=True))
    p.write_text("\n".join(lines) + "\n")


def read_trace_jsonl(path) -> dict:
    """Parse a trace file into {header, iters, final} dicts."""
    header = final = None
    iters = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["type"] == "header":
            header = rec
        elif rec["type"] == "iter":
            iters.append(rec)
        elif rec["type"] == "final":
            final = rec
    if header is None or final is None:
        raise ValueError(f"trace file {path} is missing header or final record")
    return {"header": header, "iters": iters, "final": final}
