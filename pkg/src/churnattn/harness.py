"""Experiment runner: seeded repeated runs over ablation cells, checkpoint
collection, derived ROD/ROIn metrics, ANOVA and hypothesis-test
orchestration, and report emission.

A suite writes one directory:

    out/
      suite.json            # spec + provenance (seeds, config hashes, timestamps)
      runs/<cell>__run<i>.json
      curves/<cell>__run<i>.csv   # epoch,train_loss,test_auc
      summary/*.csv               # deterministic: re-running reproduces bytes
      report.md

Summary files and report are pure functions of the persisted runs, so
`report --from <dir>` can always rebuild them.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import CartClassifier, LogisticClassifier, MlpClassifier, compare_aucs
from .data import EncodedDataset, load_csv, prepare, split
from .exceptions import ChurnAttnError, TrainingDivergedError
from .metrics import auc, rod, roin
from .model import RunRecord, TabularAttentionClassifier
from .smote import oversample
from .stats import one_tailed_welch, two_way_anova

SUITES = (
    "smote-ablation",
    "heads-ablation",
    "anova-grid",
    "embedding-ablation",
    "baselines",
)

HEAD_GRID = (2, 4, 8, 16)
SPLIT_RATIO = 0.8
SMOTE_K = 5

# Acceptance bands for the report's PASS/FAIL column.
BANDS = {
    "smote_on_auc_1000": (0.92, 0.96),
    "smote_gap_min": 0.08,
    "lr_auc": (0.64, 0.74),
    "dt_auc": (0.80, 0.88),
}


@dataclass
class CellSpec:
    """One experimental condition: which model and which factor levels."""

    name: str
    model: str = "attention"  # attention | logistic | tree | mlp
    use_smote: bool = True
    n_heads: int = 8
    use_entity_embedding: bool = True


@dataclass
class SuiteSpec:
    suite: str
    data_path: str
    out_dir: str
    runs_per_cell: int = 5
    base_seed: int = 0
    workers: int = 1
    # before-split reproduces the reference results (synthetic minority rows
    # are drawn before partitioning, so some land in the test set);
    # train-only is the leakage-free variant.
    smote_placement: str = "before-split"
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; expected one of {SUITES}")
        if self.smote_placement not in ("before-split", "train-only"):
            raise ValueError(
                f"smote_placement must be 'before-split' or 'train-only', "
                f"got {self.smote_placement!r}"
            )
        if self.runs_per_cell < 2:
            raise ValueError("runs_per_cell must be >= 2 to feed the statistics")

    def cells(self) -> list[CellSpec]:
        if self.suite == "smote-ablation":
            return [
                CellSpec("smote-on", use_smote=True),
                CellSpec("smote-off", use_smote=False),
            ]
        if self.suite == "heads-ablation":
            return [CellSpec(f"heads-{h}", n_heads=h) for h in HEAD_GRID]
        if self.suite == "anova-grid":
            return [
                CellSpec(f"smote-{'on' if s else 'off'}_heads-{h}", use_smote=s, n_heads=h)
                for s in (True, False)
                for h in HEAD_GRID
            ]
        if self.suite == "embedding-ablation":
            return [
                CellSpec("embedding-on", use_entity_embedding=True),
                CellSpec("embedding-off", use_entity_embedding=False),
            ]
        return [
            CellSpec("attention", model="attention"),
            CellSpec("logistic", model="logistic"),
            CellSpec("tree", model="tree"),
            CellSpec("mlp", model="mlp"),
        ]

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "data_path": str(self.data_path),
            "out_dir": str(self.out_dir),
            "runs_per_cell": self.runs_per_cell,
            "base_seed": self.base_seed,
            "workers": self.workers,
            "smote_placement": self.smote_placement,
            "model_overrides": self.model_overrides,
        }


@dataclass
class SuiteResult:
    spec: SuiteSpec
    runs: list[dict]  # one dict per completed or failed run

    def completed(self) -> list[dict]:
        return [r for r in self.runs if r.get("status") == "ok"]

    def by_cell(self) -> dict[str, list[dict]]:
        cells: dict[str, list[dict]] = {}
        for r in sorted(self.completed(), key=lambda r: (r["cell"], r["run"])):
            cells.setdefault(r["cell"], []).append(r)
        return cells


def _fmt(x) -> str:
    """Shortest-roundtrip decimal text; deterministic for identical floats."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _split_for_run(
    data: EncodedDataset, use_smote: bool, placement: str, seed: int
) -> tuple[EncodedDataset, EncodedDataset, bool]:
    """Returns (train, test, apply_smote_after_split)."""
    if use_smote and placement == "before-split":
        balanced = oversample(data, k_neighbors=SMOTE_K, seed=seed)
        train, test = split(balanced, SPLIT_RATIO, seed)
        return train, test, False
    train, test = split(data, SPLIT_RATIO, seed)
    return train, test, use_smote


def execute_run(data: EncodedDataset, cell: CellSpec, run_idx: int, spec: SuiteSpec) -> dict:
    """Train one (cell, run) combination and package the outcome."""
    seed = spec.base_seed + run_idx
    base = {
        "cell": cell.name,
        "run": run_idx,
        "seed": seed,
        "factors": {
            "model": cell.model,
            "use_smote": cell.use_smote,
            "n_heads": cell.n_heads,
            "use_entity_embedding": cell.use_entity_embedding,
            "smote_placement": spec.smote_placement,
        },
    }
    try:
        train, test, smote_in_fit = _split_for_run(
            data, cell.use_smote, spec.smote_placement, seed
        )
        if cell.model == "attention":
            params = dict(
                n_heads=cell.n_heads,
                seed=seed,
                use_smote=smote_in_fit,
                use_entity_embedding=cell.use_entity_embedding,
                smote_k=SMOTE_K,
            )
            params.update(spec.model_overrides)
            model = TabularAttentionClassifier(**params)
            model.fit(train, eval_ds=test)
            record = model.run_record_
            base.update(
                status="ok",
                record=record.to_dict(),
                derived=derived_metrics(record),
                final_auc=record.checkpoints[-1].test_auc,
            )
        else:
            if smote_in_fit:
                train = oversample(train, k_neighbors=SMOTE_K, seed=seed)
            model = _make_baseline(cell.model, seed)
            model.fit(train)
            base.update(
                status="ok",
                record=None,
                derived={},
                final_auc=float(auc(model.predict_proba(test), test.labels)),
            )
    except (TrainingDivergedError, ChurnAttnError) as e:
        base.update(status="failed", error=str(e))
    return base


def _make_baseline(kind: str, seed: int):
    if kind == "logistic":
        return LogisticClassifier(seed=seed)
    if kind == "tree":
        return CartClassifier()
    if kind == "mlp":
        return MlpClassifier(seed=seed)
    raise ValueError(f"unknown baseline kind {kind!r}")


def derived_metrics(record: RunRecord) -> dict:
    """ROD/ROIn over the 50->500 and 500->1000 checkpoint windows."""
    out = {}
    try:
        out["rod1"] = rod(record.loss_at(50), record.loss_at(500))
        out["roin1"] = roin(record.auc_at(50), record.auc_at(500))
        out["rod2"] = rod(record.loss_at(500), record.loss_at(1000))
        out["roin2"] = roin(record.auc_at(500), record.auc_at(1000))
    except (KeyError, ValueError):
        pass  # shorter runs simply have no windowed metrics
    return out


def _worker_init():
    # one BLAS/numba thread per worker; runs are already process-parallel
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass
    try:
        import numba

        numba.set_num_threads(1)
    except Exception:
        pass


def _run_star(args):
    return execute_run(*args)


def run_suite(spec: SuiteSpec) -> SuiteResult:
    """Execute every (cell, run) combination and persist everything."""
    data = prepare(load_csv(spec.data_path))
    jobs = [
        (data, cell, run_idx, spec)
        for cell in spec.cells()
        for run_idx in range(spec.runs_per_cell)
    ]
    if spec.workers > 1:
        # spawn, not fork: the attention kernels hold OpenMP state that does
        # not survive forking
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(spec.workers, mp_context=ctx, initializer=_worker_init) as pool:
            runs = list(pool.map(_run_star, jobs))
    else:
        runs = [execute_run(*job) for job in jobs]
    runs.sort(key=lambda r: (r["cell"], r["run"]))
    result = SuiteResult(spec=spec, runs=runs)
    persist_suite(result)
    return result


# -- persistence --------------------------------------------------------------


def persist_suite(result: SuiteResult) -> None:
    out = Path(result.spec.out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "curves").mkdir(exist_ok=True)
    doc = {
        "spec": result.spec.to_dict(),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "run_index": [
            {
                "cell": r["cell"],
                "run": r["run"],
                "seed": r["seed"],
                "status": r["status"],
                "config_digest": _config_digest(r),
            }
            for r in result.runs
        ],
    }
    with open(out / "suite.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    for r in result.runs:
        name = f"{r['cell']}__run{r['run']}"
        with open(out / "runs" / f"{name}.json", "w", encoding="utf-8") as fh:
            json.dump(r, fh)
        if r.get("status") == "ok" and r.get("record"):
            lines = ["epoch,train_loss,test_auc"]
            for c in r["record"]["checkpoints"]:
                lines.append(f"{c['epoch']},{_fmt(c['train_loss'])},{_fmt(c['test_auc'])}")
            (out / "curves" / f"{name}.csv").write_text("\n".join(lines) + "\n")
    emit_report(out)


def _config_digest(run: dict) -> str:
    blob = json.dumps(run.get("factors", {}), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_suite(out_dir) -> SuiteResult:
    out = Path(out_dir)
    with open(out / "suite.json", "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    spec = SuiteSpec(**doc["spec"])
    runs = []
    for entry in doc["run_index"]:
        name = f"{entry['cell']}__run{entry['run']}"
        with open(out / "runs" / f"{name}.json", "r", encoding="utf-8") as fh:
            runs.append(json.load(fh))
    runs.sort(key=lambda r: (r["cell"], r["run"]))
    return SuiteResult(spec=spec, runs=runs)


# -- summaries ----------------------------------------------------------------


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1))


def _cell_stat(runs: list[dict], getter) -> list[float]:
    return [getter(r) for r in runs]


def performance_summary(result: SuiteResult) -> str:
    """Per (cell, epoch in {500, 1000}): train loss, ROD, test AUC, ROIn."""
    lines = [
        "cell,epoch,train_loss_mean,train_loss_std,rod_mean,rod_std,"
        "test_auc_mean,test_auc_std,roin_mean,roin_std"
    ]
    for cell, runs in result.by_cell().items():
        if runs[0]["factors"]["model"] != "attention" or len(runs) < 2:
            continue
        for epoch, rod_key, roin_key in ((500, "rod1", "roin1"), (1000, "rod2", "roin2")):
            recs = [RunRecord.from_dict(r["record"]) for r in runs]
            if any(epoch not in rec.epochs() for rec in recs):
                continue
            lm, ls = _mean_std([rec.loss_at(epoch) for rec in recs])
            am, asd = _mean_std([rec.auc_at(epoch) for rec in recs])
            rm, rs = _mean_std([r["derived"][rod_key] for r in runs])
            im, isd = _mean_std([r["derived"][roin_key] for r in runs])
            lines.append(
                f"{cell},{epoch},{_fmt(lm)},{_fmt(ls)},{_fmt(rm)},{_fmt(rs)},"
                f"{_fmt(am)},{_fmt(asd)},{_fmt(im)},{_fmt(isd)}"
            )
    return "\n".join(lines) + "\n"


def anova_observations(result: SuiteResult, metric: str, epoch: int) -> np.ndarray:
    """(smote level, head level, replicate) observations for the grid suite."""
    cells = result.by_cell()
    runs_per_cell = min(len(v) for v in cells.values())
    obs = np.empty((2, len(HEAD_GRID), runs_per_cell))
    for i, smote in enumerate(("on", "off")):
        for j, heads in enumerate(HEAD_GRID):
            runs = cells[f"smote-{smote}_heads-{heads}"][:runs_per_cell]
            for k, r in enumerate(runs):
                rec = RunRecord.from_dict(r["record"])
                if metric == "auc":
                    obs[i, j, k] = rec.auc_at(epoch)
                else:
                    obs[i, j, k] = r["derived"]["roin1" if epoch == 500 else "roin2"]
    return obs


def embedding_tests(result: SuiteResult) -> str:
    """Per-checkpoint right-tailed Welch tests, embedding-on vs embedding-off.

    For train loss the alternative is loss(off) > loss(on); for test AUC it
    is auc(on) > auc(off). No multiple-comparison correction is applied (the
    20 per-metric tests are reported raw).
    """
    cells = result.by_cell()
    on = [RunRecord.from_dict(r["record"]) for r in cells["embedding-on"]]
    off = [RunRecord.from_dict(r["record"]) for r in cells["embedding-off"]]
    epochs = sorted(set(on[0].epochs()) & set(off[0].epochs()))
    lines = ["metric,epoch,t,p"]
    for metric in ("train_loss", "test_auc"):
        for epoch in epochs:
            if metric == "train_loss":
                t, p = one_tailed_welch(
                    [rec.loss_at(epoch) for rec in off],
                    [rec.loss_at(epoch) for rec in on],
                    direction="greater",
                )
            else:
                t, p = one_tailed_welch(
                    [rec.auc_at(epoch) for rec in on],
                    [rec.auc_at(epoch) for rec in off],
                    direction="greater",
                )
            lines.append(f"{metric},{epoch},{_fmt(t)},{_fmt(p)}")
    return "\n".join(lines) + "\n"


def baseline_table(result: SuiteResult) -> str:
    """Table of mean+-std AUC per model with one-tailed tests vs attention."""
    samples = {
        cell: [r["final_auc"] for r in runs]
        for cell, runs in result.by_cell().items()
        if len(runs) >= 2
    }
    rows = compare_aucs("attention", samples)
    lines = ["model,test_auc_mean,test_auc_std,t_vs_attention,p_vs_attention"]
    for row in sorted(rows, key=lambda r: r.model):
        t = "" if row.t_statistic is None else _fmt(row.t_statistic)
        p = "" if row.p_value is None else _fmt(row.p_value)
        lines.append(f"{row.model},{_fmt(row.mean_auc)},{_fmt(row.std_auc)},{t},{p}")
    return "\n".join(lines) + "\n"


def build_summaries(result: SuiteResult) -> dict[str, str]:
    """All summary CSVs for a suite, keyed by file name."""
    suite = result.spec.suite
    out: dict[str, str] = {}
    if suite in ("smote-ablation", "heads-ablation", "anova-grid", "embedding-ablation"):
        out["performance.csv"] = performance_summary(result)
    if suite == "anova-grid":
        for metric, epoch, name in (
            ("auc", 500, "anova_test_auc_500.csv"),
            ("auc", 1000, "anova_test_auc_1000.csv"),
            ("roin", 500, "anova_roin_500.csv"),
            ("roin", 1000, "anova_roin_1000.csv"),
        ):
            table = two_way_anova(anova_observations(result, metric, epoch))
            out[name] = table.to_csv()
    if suite == "embedding-ablation":
        out["embedding_tests.csv"] = embedding_tests(result)
    if suite == "baselines":
        out["baseline_comparison.csv"] = baseline_table(result)
    return out


# -- report -------------------------------------------------------------------


def _cell_auc_at(result: SuiteResult, cell: str, epoch: int) -> list[float]:
    return [
        RunRecord.from_dict(r["record"]).auc_at(epoch)
        for r in result.by_cell().get(cell, [])
    ]


def report_checks(result: SuiteResult) -> list[tuple[str, bool, str]]:
    """(description, passed, detail) rows for the suite's report.

    Checks that need checkpoints the runs do not have (e.g. epoch 1000 on a
    shortened smoke suite) are skipped rather than failed.
    """
    try:
        return _report_checks(result)
    except (KeyError, ValueError):
        return []


def _report_checks(result: SuiteResult) -> list[tuple[str, bool, str]]:
    suite = result.spec.suite
    checks: list[tuple[str, bool, str]] = []
    cells = result.by_cell()
    if suite in ("smote-ablation", "anova-grid"):
        on_cell = "smote-on" if suite == "smote-ablation" else "smote-on_heads-8"
        off_cell = "smote-off" if suite == "smote-ablation" else "smote-off_heads-8"
        lo, hi = BANDS["smote_on_auc_1000"]
        on_1000 = np.mean(_cell_auc_at(result, on_cell, 1000))
        off_1000 = np.mean(_cell_auc_at(result, off_cell, 1000))
        off_500 = np.mean(_cell_auc_at(result, off_cell, 500))
        checks.append(
            (
                f"with-rebalancing mean test AUC at 1000 epochs in [{lo}, {hi}]",
                bool(lo <= on_1000 <= hi),
                f"mean={on_1000:.4f}",
            )
        )
        checks.append(
            (
                f"rebalancing AUC gap at 1000 epochs >= {BANDS['smote_gap_min']}",
                bool(on_1000 - off_1000 >= BANDS["smote_gap_min"]),
                f"gap={on_1000 - off_1000:.4f}",
            )
        )
        checks.append(
            (
                "without rebalancing, AUC at 1000 < AUC at 500 (overfit signature)",
                bool(off_1000 < off_500),
                f"1000: {off_1000:.4f} vs 500: {off_500:.4f}",
            )
        )
    if suite in ("heads-ablation", "anova-grid"):
        prefix = "" if suite == "heads-ablation" else "smote-on_"
        two = np.mean(_cell_auc_at(result, f"{prefix}heads-2", 1000))
        eight = np.mean(_cell_auc_at(result, f"{prefix}heads-8", 1000))
        roin2_2 = np.mean([r["derived"]["roin2"] for r in cells[f"{prefix}heads-2"]])
        roin2_16 = np.mean([r["derived"]["roin2"] for r in cells[f"{prefix}heads-16"]])
        checks.append(
            (
                "2-head mean AUC < 8-head mean AUC at 1000 epochs",
                bool(two < eight),
                f"{two:.4f} vs {eight:.4f}",
            )
        )
        checks.append(
            (
                "16-head mean ROIn(500->1000) < 2-head mean ROIn(500->1000)",
                bool(roin2_16 < roin2_2),
                f"{roin2_16:.4f} vs {roin2_2:.4f}",
            )
        )
    if suite == "anova-grid":
        table = two_way_anova(anova_observations(result, "auc", 1000))
        df_col = tuple(r.df for r in table.rows())
        checks.append(
            (
                "ANOVA df column equals (1, 3, 3, 32, 39)",
                df_col == (1, 3, 3, 32, 39),
                str(df_col),
            )
        )
        for epoch in (500, 1000):
            t = two_way_anova(anova_observations(result, "auc", epoch))
            checks.append(
                (
                    f"rebalancing factor p < 1e-6 for test AUC at {epoch} epochs",
                    bool(t.factor_a.p < 1e-6),
                    f"p={t.factor_a.p:.3e}",
                )
            )
    if suite == "embedding-ablation":
        on = _cell_auc_at(result, "embedding-on", 1000)
        off = _cell_auc_at(result, "embedding-off", 1000)
        t, p = one_tailed_welch(on, off, direction="greater")
        checks.append(
            (
                "embedding-on mean AUC > embedding-off at 1000 epochs, p < 0.05",
                bool(np.mean(on) > np.mean(off) and p < 0.05),
                f"means {np.mean(on):.4f} vs {np.mean(off):.4f}, p={p:.4g}",
            )
        )
    if suite == "baselines":
        aucs = {c: [r["final_auc"] for r in rs] for c, rs in cells.items()}
        att, dt, lr = (np.mean(aucs[c]) for c in ("attention", "tree", "logistic"))
        _, p_ad = one_tailed_welch(aucs["attention"], aucs["tree"], "greater")
        _, p_dl = one_tailed_welch(aucs["tree"], aucs["logistic"], "greater")
        checks.append(
            (
                "ordering attention > tree > logistic, pairwise p < 0.05",
                bool(att > dt > lr and p_ad < 0.05 and p_dl < 0.05),
                f"{att:.4f} > {dt:.4f} > {lr:.4f}, p={p_ad:.4g}/{p_dl:.4g}",
            )
        )
        for key, cell in (("lr_auc", "logistic"), ("dt_auc", "tree")):
            lo, hi = BANDS[key]
            mean = np.mean(aucs[cell])
            checks.append(
                (
                    f"{cell} mean AUC in [{lo}, {hi}]",
                    bool(lo <= mean <= hi),
                    f"mean={mean:.4f}",
                )
            )
    return checks


def emit_report(out_dir) -> bool:
    """Rebuild summary CSVs and report.md from persisted runs.

    Returns True when every report check passed.
    """
    out = Path(out_dir)
    result = load_suite(out)
    summary_dir = out / "summary"
    summary_dir.mkdir(exist_ok=True)
    for name, text in build_summaries(result).items():
        (summary_dir / name).write_text(text)

    failed_runs = [r for r in result.runs if r.get("status") != "ok"]
    checks = report_checks(result)
    lines = [
        f"# Suite report: {result.spec.suite}",
        "",
        f"- runs per cell: {result.spec.runs_per_cell}",
        f"- base seed: {result.spec.base_seed}",
        f"- rebalancing placement: {result.spec.smote_placement}",
        f"- completed runs: {len(result.completed())}/{len(result.runs)}",
        "",
    ]
    if failed_runs:
        lines.append("## Failed runs")
        for r in failed_runs:
            lines.append(f"- {r['cell']} run {r['run']}: {r.get('error', 'unknown')}")
        lines.append("")
    excluded = [c for c, rs in result.by_cell().items() if len(rs) < 2]
    if excluded:
        lines.append(
            f"WARNING: cells excluded from statistics (fewer than 2 runs): {excluded}"
        )
        lines.append("")
    if result.spec.suite == "embedding-ablation":
        lines.append(
            "Note: the 20 per-checkpoint tests per metric are reported without "
            "multiple-comparison correction."
        )
        lines.append("")
    lines.append("## Checks")
    lines.append("")
    for desc, ok, detail in checks:
        lines.append(f"- [{'PASS' if ok else 'FAIL'}] {desc} ({detail})")
    lines.append("")
    (out / "report.md").write_text("\n".join(lines))
    return all(ok for _, ok, _ in checks)
