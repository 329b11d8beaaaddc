"""Command-line entry points and report generation.

Subcommands: ``gen-dataset``, ``attack``, ``report``, ``export-transfer``.
The run configuration is a single JSON file (chosen over TOML so the
stdlib can both read and write it); ``SKELATTACK_SEED`` in the environment
overrides the config seed. Exit codes: 0 success, 2 usage or input error,
3 oracle startup failure, 4 partial batch.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
from pathlib import Path

from .attack_engine import AttackConfig, run_batch, write_trace_jsonl, read_trace_jsonl
from .dataset_gen import load_dataset, write_dataset
from .image_core import SetValue, Toggle, save_png
from .loss_metrics import EPS_SIM, cosine_similarity, tokenize
from .region_select import Mode
from .victim_oracle import (ExternalProcessOracle, OracleUnavailable,
                            ToyTemplateOracle, load_atlas, builtin_atlas)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ORACLE = 3
EXIT_PARTIAL = 4

PROMPT_TEMPLATE = """\
Suggested prompt for manual transfer evaluation (documentation only):

    Please transcribe the mathematical expression in the attached image
    into LaTeX. Reply with the LaTeX source only.

Submit clean.png and adversarial.png in separate conversations, then record
whether the two transcriptions denote different mathematics in an
annotation file: {"<image_id>": {"semantic_changed": true, "note": "..."}}
"""


class InputError(Exception):
    """User-facing input problem; maps to exit code 2."""


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)  # shortest round-trip representation
    return str(value)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _write_markdown_table(path: Path, headers: list[str], rows: list[list[str]],
                          title: str) -> None:
    lines = [f"# {title}", ""]
    lines.append("| " + " | ".join(headers) + " |")
    lines.append("|" + "|".join("---" for _ in headers) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# gen-dataset
# ---------------------------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    if args.n < 1:
        raise InputError("--n must be >= 1")
    manifest = write_dataset(args.out, n=args.n, seed=args.seed)
    print(f"wrote {args.n} images; manifest at {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


def _parse_perturb(block: dict):
    model = (block or {}).get("model", "toggle")
    if model == "toggle":
        return Toggle()
    if model == "set":
        return SetValue(int(block["value"]))
    raise InputError(f"unknown perturb model {model!r}")


def load_run_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file {p} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"config is not valid JSON: {e}") from e
    for key in ("dataset", "output_dir", "grid"):
        if key not in cfg:
            raise InputError(f"config missing required key {key!r}")
    grid = cfg["grid"]
    for key in ("modes", "budgets", "optimizers"):
        if not grid.get(key):
            raise InputError(f"config grid.{key} must be a non-empty list")
    env_seed = os.environ.get("SKELATTACK_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    cfg.setdefault("seed", 0)
    cfg.setdefault("iterations", 300)
    cfg.setdefault("threshold", 128)
    cfg.setdefault("oracle", {"kind": "toy"})
    return cfg


def _expand_grid(cfg: dict) -> list[AttackConfig]:
    perturb = _parse_perturb(cfg.get("perturb"))
    stagnation = cfg.get("stagnation_restart")
    opt_params = cfg.get("optimizer_params", {})  # keyed by optimizer kind
    configs = []
    for mode in cfg["grid"]["modes"]:
        for k in cfg["grid"]["budgets"]:
            for optimizer in cfg["grid"]["optimizers"]:
                configs.append(AttackConfig(
                    mode=Mode(mode), k=int(k), optimizer=optimizer,
                    seed=int(cfg["seed"]), iterations=int(cfg["iterations"]),
                    threshold=int(cfg["threshold"]), perturb=perturb,
                    optimizer_params=opt_params.get(optimizer, {}),
                    early_stop_at_zero=bool(cfg.get("early_stop_at_zero", False)),
                    stagnation_restart=int(stagnation) if stagnation else None,
                ))
    return configs


def _oracle_factory(cfg: dict, dataset_dir: Path):
    ocfg = cfg.get("oracle", {})
    kind = ocfg.get("kind", "toy")
    budget = int(ocfg.get("query_budget", 100_000))
    if kind == "toy":
        atlas_path = ocfg.get("atlas")
        if atlas_path:
            atlas = load_atlas(atlas_path)
        elif (dataset_dir / "atlas" / "manifest.json").exists():
            atlas = load_atlas(dataset_dir / "atlas")
        else:
            atlas = builtin_atlas()
        threshold = int(cfg.get("threshold", 128))
        return lambda: ToyTemplateOracle(atlas=atlas, threshold=threshold,
                                         query_budget=budget)
    if kind == "external":
        command = ocfg.get("command")
        if not command:
            raise InputError("external oracle config needs a command list")
        timeout = int(ocfg.get("timeout_ms", 10_000))
        # probe once so a broken victim fails fast with exit code 3
        ExternalProcessOracle(command, query_budget=1, timeout_ms=timeout).close()
        return lambda: ExternalProcessOracle(command, query_budget=budget,
                                             timeout_ms=timeout)
    raise InputError(f"unknown oracle kind {kind!r}")


def _trace_stem(trace) -> str:
    return f"{trace.image_id}__{Mode(trace.mode).value}__k{trace.k}__{trace.optimizer}"


METRICS_FIELDS = ["image_id", "mode", "k", "optimizer", "cosine_similarity",
                  "success", "accuracy", "psnr", "queries", "wall_time_ms"]
AGG_FIELDS = ["mode", "k", "optimizer", "n_images", "mean_cosine",
              "success_rate", "mean_accuracy", "mean_psnr", "mean_queries"]


def write_batch_outputs(result, out_dir: Path, image_paths: dict[str, str]) -> None:
    """Persist traces, adversarial PNGs, per-image metrics, and aggregates."""
    traces_dir = out_dir / "traces"
    adv_dir = out_dir / "adversarial"
    adv_dir.mkdir(parents=True, exist_ok=True)

    metric_rows = []
    for tr in result.traces:
        stem = _trace_stem(tr)
        adv_rel = f"../adversarial/{stem}.png"
        save_png(tr.adversarial_image, adv_dir / f"{stem}.png")
        write_trace_jsonl(tr, traces_dir / f"{stem}.jsonl", adv_image_ref=adv_rel,
                          extra_header={"image_path": image_paths.get(tr.image_id)})
        metric_rows.append({
            "image_id": tr.image_id, "mode": Mode(tr.mode).value, "k": tr.k,
            "optimizer": tr.optimizer,
            "cosine_similarity": tr.metrics.cosine_similarity,
            "success": tr.metrics.success, "accuracy": tr.metrics.accuracy,
            "psnr": tr.metrics.psnr, "queries": tr.queries,
            "wall_time_ms": tr.wall_time_ms,
        })
    _write_csv(out_dir / "metrics.csv", METRICS_FIELDS, metric_rows)
    with open(out_dir / "metrics.jsonl", "w") as fh:
        for row in metric_rows:
            fh.write(json.dumps({k: row[k] for k in METRICS_FIELDS},
                                sort_keys=True) + "\n")

    agg = result.aggregates
    _write_csv(out_dir / "aggregates.csv", AGG_FIELDS,
               [{f: getattr(row, f) for f in AGG_FIELDS} for row in agg])
    _write_csv(out_dir / "timings.csv",
               ["mode", "k", "optimizer", "mean_wall_time_ms"],
               [{"mode": r.mode, "k": r.k, "optimizer": r.optimizer,
                 "mean_wall_time_ms": r.mean_wall_time_ms} for r in agg])
    if result.failures:
        lines = [f"{cell}: {err}" for cell, err in result.failures]
        (out_dir / "failures.txt").write_text("\n".join(lines) + "\n")


def cmd_attack(args) -> int:
    cfg = load_run_config(args.config)
    dataset_dir = Path(cfg["dataset"])
    if not (dataset_dir / "manifest.json").exists():
        raise InputError(f"dataset manifest not found under {dataset_dir}")
    _, images, _ = load_dataset(dataset_dir)

    try:
        factory = _oracle_factory(cfg, dataset_dir)
    except OracleUnavailable as e:
        print(f"oracle startup failed: {e}", file=sys.stderr)
        return EXIT_ORACLE

    configs = _expand_grid(cfg)
    result = run_batch(images, configs, factory)

    out_dir = Path(cfg["output_dir"])
    write_batch_outputs(result, out_dir, {im.id: im.path for im in images})
    print(f"{len(result.traces)} traces -> {out_dir}")
    if result.failures:
        for cell, err in result.failures:
            print(f"cell failed: {cell}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _load_traces(traces_dir: Path) -> list[dict]:
    if not traces_dir.is_dir():
        raise InputError(f"trace directory {traces_dir} does not exist")
    files = sorted(traces_dir.glob("*.jsonl"))
    if not files:
        raise InputError(f"no .jsonl traces under {traces_dir}")
    return [read_trace_jsonl(f) | {"path": f} for f in files]


def recompute_aggregates(traces: list[dict]) -> list[dict]:
    """Aggregate rows straight from raw trace records (the recount oracle)."""
    cells: dict[tuple[str, int, str], list[dict]] = {}
    for tr in traces:
        h = tr["header"]
        cells.setdefault((h["mode"], h["k"], h["optimizer"]), []).append(tr["final"])
    rows = []
    for (mode, k, optimizer), finals in sorted(cells.items()):
        n = len(finals)
        rows.append({
            "mode": mode, "k": k, "optimizer": optimizer, "n_images": n,
            "mean_cosine": sum(f["cosine"] for f in finals) / n,
            "success_rate": sum(f["cosine"] < 1.0 - EPS_SIM for f in finals) / n,
            "mean_accuracy": sum(f["accuracy"] for f in finals) / n,
            "mean_psnr": sum(f["psnr"] for f in finals) / n,
            "mean_queries": sum(f["queries"] for f in finals) / n,
        })
    return rows


def _table1(traces: list[dict], out_dir: Path) -> None:
    cells: dict[tuple[str, int], list[dict]] = {}
    for tr in traces:
        h = tr["header"]
        cells.setdefault((h["mode"], h["k"]), []).append(tr["final"])
    modes = sorted({m for m, _ in cells})
    budgets = sorted({b for _, b in cells})

    def cell_stats(finals):
        n = len(finals)
        return {
            "mean_cosine": sum(f["cosine"] for f in finals) / n,
            "success_rate": sum(f["cosine"] < 1.0 - EPS_SIM for f in finals) / n,
            "mean_accuracy": sum(f["accuracy"] for f in finals) / n,
            "mean_psnr": sum(f["psnr"] for f in finals) / n,
            "n": n,
        }

    stats = {cell: cell_stats(finals) for cell, finals in cells.items()}
    headers = ["Mode"]
    for metric in ("Cosine Similarity", "Success Rate", "Accuracy", "PSNR"):
        headers += [f"{metric} k={b}" for b in budgets]
    rows = []
    for mode in modes:
        row = [mode]
        for key in ("mean_cosine", "success_rate", "mean_accuracy", "mean_psnr"):
            for b in budgets:
                st = stats.get((mode, b))
                row.append(_fmt(round(st[key], 4)) if st else "")
        rows.append(row)
    _write_markdown_table(out_dir / "table1_narrowing.md", headers, rows,
                          "Narrowing methods comparison")
    _write_csv(out_dir / "table1_narrowing.csv",
               ["mode", "k", "mean_cosine", "success_rate", "mean_accuracy",
                "mean_psnr", "n_traces"],
               [{"mode": m, "k": b, "mean_cosine": st["mean_cosine"],
                 "success_rate": st["success_rate"],
                 "mean_accuracy": st["mean_accuracy"],
                 "mean_psnr": st["mean_psnr"], "n_traces": st["n"]}
                for (m, b), st in sorted(stats.items())])


def _table2(agg: list[dict], traces: list[dict], out_dir: Path) -> None:
    optimizers = sorted({r["optimizer"] for r in agg})
    budgets = sorted({r["k"] for r in agg})
    cos_cell: dict[tuple[str, int], list[float]] = {}
    time_cell: dict[str, list[float]] = {}
    for tr in traces:
        h, f = tr["header"], tr["final"]
        cos_cell.setdefault((h["optimizer"], h["k"]), []).append(f["cosine"])
        time_cell.setdefault(h["optimizer"], []).append(f["wall_time_ms"])
    headers = ["Optimizer"] + [f"Cosine Similarity k={b}" for b in budgets] + ["Time (sec)"]
    rows = []
    csv_rows = []
    for opt in optimizers:
        row = [opt]
        for b in budgets:
            vals = cos_cell.get((opt, b))
            row.append(_fmt(round(sum(vals) / len(vals), 4)) if vals else "")
        secs = sum(time_cell[opt]) / len(time_cell[opt]) / 1000.0
        row.append(_fmt(round(secs, 2)))
        rows.append(row)
        csv_rows.append({"optimizer": opt,
                         **{f"cosine_k{b}": (sum(v) / len(v) if (v := cos_cell.get((opt, b))) else "")
                            for b in budgets},
                         "time_sec": secs})
    _write_markdown_table(out_dir / "table2_optimizers.md", headers, rows,
                          "Optimization methods comparison")
    _write_csv(out_dir / "table2_optimizers.csv",
               ["optimizer"] + [f"cosine_k{b}" for b in budgets] + ["time_sec"],
               csv_rows)


def _load_annotations(path, traces: list[dict]) -> dict:
    try:
        ann = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read annotations: {e}") from e
    known = {tr["header"]["image_id"] for tr in traces}
    offenders = sorted(set(ann) - known)
    if offenders:
        raise InputError("annotation ids not present in traces: " + ", ".join(offenders))
    return ann


def _table3(traces: list[dict], annotations: dict, out_dir: Path) -> None:
    # original row: victim's clean output vs ground truth (observable analogue
    # of transfer noise on unattacked images)
    orig_cos = []
    seen = set()
    for tr in traces:
        h = tr["header"]
        if h["image_id"] in seen or not h.get("ground_truth"):
            continue
        seen.add(h["image_id"])
        orig_cos.append(cosine_similarity(tokenize(h["ground_truth"]),
                                          tokenize(h["clean_latex"])))
    att_cos = [tr["final"]["cosine"] for tr in traces]
    rate = (sum(1 for v in annotations.values() if v.get("semantic_changed"))
            / len(annotations)) if annotations else 0.0
    headers = ["", "Character Chg. (Cosine Sim.)", "Rate of Semantic Chg."]
    rows = [
        ["Original Image",
         _fmt(round(sum(orig_cos) / len(orig_cos), 4)) if orig_cos else "n/a", ""],
        ["Attacked Image",
         _fmt(round(sum(att_cos) / len(att_cos), 4)), _fmt(round(rate, 4))],
    ]
    _write_markdown_table(out_dir / "table3_semantic.md", headers, rows,
                          "Semantic and character change")
    _write_csv(out_dir / "table3_semantic.csv",
               ["row", "character_change_cosine", "semantic_change_rate"],
               [{"row": "original",
                 "character_change_cosine": (sum(orig_cos) / len(orig_cos)) if orig_cos else "",
                 "semantic_change_rate": ""},
                {"row": "attacked",
                 "character_change_cosine": sum(att_cos) / len(att_cos),
                 "semantic_change_rate": rate}])


def export_transfer_bundles(traces: list[dict], out_dir: Path) -> int:
    """Side-by-side clean/adversarial export for manual transfer evaluation."""
    n = 0
    for tr in traces:
        h, f = tr["header"], tr["final"]
        stem = tr["path"].stem
        bundle = out_dir / stem
        bundle.mkdir(parents=True, exist_ok=True)
        clean_src = h.get("image_path")
        if clean_src and Path(clean_src).exists():
            shutil.copyfile(clean_src, bundle / "clean.png")
        adv_ref = f.get("adversarial_image")
        if adv_ref:
            adv_src = (tr["path"].parent / adv_ref).resolve()
            if adv_src.exists():
                shutil.copyfile(adv_src, bundle / "adversarial.png")
        (bundle / "clean.tex").write_text(h["clean_latex"] + "\n")
        (bundle / "adversarial.tex").write_text(f["latex"] + "\n")
        (bundle / "README.md").write_text(PROMPT_TEMPLATE)
        n += 1
    return n


def cmd_report(args) -> int:
    traces = _load_traces(Path(args.traces))
    out_dir = Path(args.out) if args.out else Path(args.traces).parent / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    agg = recompute_aggregates(traces)
    _write_csv(out_dir / "aggregates.csv", AGG_FIELDS, agg)
    _table1(traces, out_dir)
    _table2(agg, traces, out_dir)
    if args.annotations:
        annotations = _load_annotations(args.annotations, traces)
        _table3(traces, annotations, out_dir)
    n = export_transfer_bundles(traces, out_dir / "transfer")
    note = ("Accuracy is the LCS character overlap of clean vs adversarial "
            "LaTeX, normalized by the clean length.\n")
    (out_dir / "README.txt").write_text(note)
    print(f"report written to {out_dir} ({n} transfer bundles)")
    return EXIT_OK


def cmd_export_transfer(args) -> int:
    traces = _load_traces(Path(args.traces))
    out_dir = Path(args.out)
    n = export_transfer_bundles(traces, out_dir)
    print(f"exported {n} bundles to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelattack",
        description="Skeletonization-narrowed black-box attacks on LaTeX OCR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate the rendered formula corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("attack", help="run the attack grid from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="render tables from a trace directory")
    p.add_argument("--traces", required=True)
    p.add_argument("--annotations")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-transfer", help="side-by-side clean/adversarial export")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_transfer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
