"""Config-driven experiments: policy comparison, sweeps, benchmarks, mask analysis."""

from __future__ import annotations

import copy
import csv
import json
import logging
import multiprocessing as mp
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adsub import plotting
from adsub.agent import AgentConfig, evenly_spaced_steps, keyed_rng, run_ads, run_fixed_mask
from adsub.config import ConfigError, ExperimentConfig
from adsub.data import (
    Dataset,
    data_variance_weights,
    downsample,
    load_idx,
    planted_structure_gmm,
    read_dataset_csv,
    read_dataset_tensor,
    synth_gmm_dataset,
    write_mask_csv,
    write_mask_pgm,
    write_tensor,
)
from adsub.measurement import MeasurementModel, build_action_space
from adsub.metrics import mae, mask_distribution_entropy, psnr, ssim
from adsub.policy import baseline_mask
from adsub.prior import IsotropicGmm, fit_gmm_em

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["policy", "budget", "sample_id", "label", "mae", "psnr", "ssim", "ssim_particles"]
_RANDOM_MASK, _DV_MASK = 10, 11


@dataclass
class Context:
    cfg: ExperimentConfig
    train: Dataset
    test: Dataset
    prior: IsotropicGmm
    model: MeasurementModel
    weights: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.model.space.shape


# --- preparation ----------------------------------------------------------

def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.kind == "planted":
        truth = planted_structure_gmm(tuple(ds.shape), ds.n_components, ds.n_groups, ds.blob, ds.marker,
                                      ds.marker_level, ds.background, ds.noise, ds.seed)
        return (synth_gmm_dataset(truth, ds.n_train, ds.seed, ds.shape),
                synth_gmm_dataset(truth, ds.n_test, ds.seed + 1, ds.shape))
    if ds.kind == "gmm":
        H, W = ds.shape
        rng = np.random.default_rng(ds.seed)
        truth = IsotropicGmm(np.full(ds.n_components, 1.0 / ds.n_components),
                             rng.uniform(0.2, 0.8, (ds.n_components, H * W)),
                             np.full(ds.n_components, ds.noise ** 2))
        return (synth_gmm_dataset(truth, ds.n_train, ds.seed, ds.shape),
                synth_gmm_dataset(truth, ds.n_test, ds.seed + 1, ds.shape))
    try:
        if ds.kind == "idx":
            full = load_idx(ds.path)
        elif ds.kind == "csv":
            full = read_dataset_csv(ds.path)
        else:
            full = read_dataset_tensor(ds.path)
    except OSError as exc:
        raise ConfigError("dataset.path", str(exc)) from None
    if ds.downsample > 1 or ds.pad_to:
        full = downsample(full, ds.downsample, tuple(ds.pad_to) if ds.pad_to else None)
    if list(full.shape) != list(ds.shape):
        raise ConfigError("dataset.shape", f"data has shape {list(full.shape)} after pooling")
    if len(full) < ds.n_train + ds.n_test:
        raise ConfigError("dataset.n_test", f"only {len(full)} rows available")
    train, rest = full.split(ds.n_train)
    test, _ = rest.split(ds.n_test)
    return train, test


def build_model(cfg: ExperimentConfig) -> MeasurementModel:
    ms = cfg.measurement
    try:
        space = build_action_space(ms.action, tuple(cfg.dataset.shape), tuple(ms.box))
    except ValueError as exc:
        raise ConfigError("measurement.box", str(exc)) from None
    model = MeasurementModel(ms.forward, float(ms.noise_std), space)
    n_act = space.n_actions
    for b in cfg.evaluation.budgets:
        if b > n_act:
            raise ConfigError("evaluation.budgets", f"budget {b} exceeds the {n_act} available actions")
    if any(a >= n_act for a in cfg.agent.init_actions):
        raise ConfigError("agent.init_actions", f"action id outside [0, {n_act})")
    return model


def fit_prior(cfg: ExperimentConfig, train: Dataset) -> IsotropicGmm:
    pr = cfg.prior
    if pr.path:
        try:
            prior = IsotropicGmm.load(pr.path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError("prior.path", str(exc)) from None
        if prior.d != train.d:
            raise ConfigError("prior.path", f"prior has d={prior.d}, data has d={train.d}")
        return prior
    return fit_gmm_em(train.tensors, pr.K, pr.max_iters, pr.tol, pr.seed)


def prepare(cfg: ExperimentConfig) -> Context:
    train, test = load_dataset(cfg)
    model = build_model(cfg)
    prior = fit_prior(cfg, train)
    return Context(cfg, train, test, prior, model, data_variance_weights(model, train))


# --- per-sample work ------------------------------------------------------

def agent_config(cfg: ExperimentConfig, policy: str, budget: int) -> AgentConfig:
    ag = cfg.agent
    lo, hi = ag.betas()
    wlo, whi = ag.resolved_window()
    n_sched = budget - len(ag.init_actions) if policy == "ads" else 0
    return AgentConfig(
        T=ag.T, n_particles=ag.n_particles,
        schedule_steps=evenly_spaced_steps(n_sched, wlo, whi),
        zeta=float(ag.zeta), sigma_y=float(ag.sigma_y), init_actions=tuple(ag.init_actions),
        policy="ads", guidance_mode=ag.guidance, exponent_sign=ag.exponent_sign,
        seed=cfg.seed, schedule_kind=ag.schedule, beta_min=lo, beta_max=hi,
    )


def fixed_design(ctx: Context, policy: str, budget: int, sample_id: int) -> list[int]:
    cfg = ctx.cfg
    init = list(cfg.agent.init_actions)
    if policy == "random":
        rng = keyed_rng(cfg.seed, sample_id, _RANDOM_MASK, budget)
        return baseline_mask("random", ctx.model.space, budget, None, rng, init)
    # one design per budget, shared by every target
    rng = keyed_rng(cfg.seed, 0, _DV_MASK, budget)
    return baseline_mask("data-variance", ctx.model.space, budget, ctx.weights, rng, init)


def run_sample(ctx: Context, policy: str, budget: int, sample_id: int) -> dict:
    x = ctx.test.tensors[sample_id]
    acfg = agent_config(ctx.cfg, policy, budget)
    if policy == "ads":
        trace = run_ads(acfg, ctx.prior, ctx.model, x, stream=sample_id)
    else:
        trace = run_fixed_mask(acfg, ctx.prior, ctx.model, x, fixed_design(ctx, policy, budget, sample_id),
                               stream=sample_id)
    peak = ctx.cfg.evaluation.peak
    rec = trace.posterior_mean
    img = np.reshape(x, ctx.shape)
    label = -1 if ctx.test.labels is None else int(ctx.test.labels[sample_id])
    row = {
        "policy": policy, "budget": budget, "sample_id": sample_id, "label": label,
        "mae": mae(x, rec), "psnr": psnr(x, rec, peak),
        "ssim": ssim(img, np.reshape(rec, ctx.shape), dynamic_range=peak),
        "ssim_particles": float(np.mean([ssim(img, np.reshape(s, ctx.shape), dynamic_range=peak)
                                         for s in trace.samples])),
    }
    return {"row": row, "trace": trace, "recon": rec}


_CTX: Context | None = None


def _init_worker(ctx):
    global _CTX
    _CTX = ctx


def _task(args):
    policy, budget, sid = args
    return run_sample(_CTX, policy, budget, sid)


def run_tasks(ctx: Context, tasks, workers: int) -> list[dict]:
    if workers <= 1 or len(tasks) <= 1:
        return [run_sample(ctx, *t) for t in tasks]
    mp_ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    with mp_ctx.Pool(workers, initializer=_init_worker, initargs=(ctx,)) as pool:
        return pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers)))


# --- outputs --------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "inf" if v == float("inf") else repr(v)
    return str(v)


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for k in ("budget", "sample_id", "label"):
            r[k] = int(r[k])
        for k in ("mae", "psnr", "ssim", "ssim_particles"):
            r[k] = float(r[k])
    return rows


def write_trace(dirpath: Path, res: dict, ctx: Context) -> None:
    tr, row = res["trace"], res["row"]
    dirpath.mkdir(parents=True, exist_ok=True)
    write_mask_csv(dirpath / "mask.csv", tr.mask, ctx.shape)
    write_tensor(dirpath / "samples.bin", tr.samples)
    with open(dirpath / "actions.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["order", "step", "action", "score", "values"])
        by_action = {rec.action: rec for rec in tr.records}
        space = ctx.model.space
        vals = dict(zip(tr.measurements.indices.tolist(), tr.measurements.values.tolist()))
        for i, a in enumerate(tr.actions):
            rec = by_action.get(a)
            step = rec.step if rec else ctx.cfg.agent.T
            score = _fmt(float(rec.scores[a])) if rec else ""
            v = ";".join(_fmt(vals[int(c)]) if not isinstance(vals[int(c)], complex) else str(vals[int(c)])
                         for c in space.groups[a])
            w.writerow([i, step, a, score, v])
    if tr.records:
        np.savetxt(dirpath / "scores.csv", np.array([r.scores for r in tr.records]),
                   delimiter=",", fmt="%.17g")
    meta = {"policy": row["policy"], "budget": row["budget"], "sample_id": row["sample_id"],
            "label": row["label"], "n_actions": ctx.model.space.n_actions,
            "shape": list(ctx.shape), "actions": tr.actions,
            "policy_evaluations": tr.policy_evaluations}
    (dirpath / "meta.json").write_text(json.dumps(meta, indent=1))
    (dirpath / "timings.json").write_text(json.dumps(tr.timings, indent=1))


def _group(results):
    groups: dict[tuple[str, int], list[dict]] = {}
    for res in results:
        key = (res["row"]["policy"], res["row"]["budget"])
        groups.setdefault(key, []).append(res)
    return groups


def _stat(values):
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"mean": float("nan"), "stderr": float("nan")}
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "stderr": se}


def nearest_neighbour_agreement(masks, labels) -> float:
    """Fraction of masks whose Hamming-nearest other mask has the same label."""
    m = np.asarray(masks, dtype=np.int64)
    labels = np.asarray(labels)
    if m.shape[0] < 2:
        return float("nan")
    dist = (m[:, None, :] != m[None, :, :]).sum(axis=2).astype(float)
    np.fill_diagonal(dist, np.inf)
    nn = dist.argmin(axis=1)  # ties -> lowest index
    return float(np.mean(labels[nn] == labels))


def summarize(results, ctx: Context) -> list[dict]:
    out = []
    for (policy, budget), items in _group(results).items():
        rows = [r["row"] for r in items]
        masks = [r["trace"].action_mask for r in items]
        labels = [r["row"]["label"] for r in items]
        _, ent = mask_distribution_entropy(masks)
        entry = {"policy": policy, "budget": budget, "n": len(rows)}
        for k in ("mae", "psnr", "ssim", "ssim_particles"):
            entry[k] = _stat([r[k] for r in rows])
        entry["mask_entropy_bits"] = ent
        if ctx.test.labels is not None:
            entry["mask_nn_label_agreement"] = nearest_neighbour_agreement(masks, labels)
        out.append(entry)
    return out


def _prior_info(prior: IsotropicGmm) -> dict:
    info = {"K": prior.K, "d": prior.d}
    if prior.fit_info:
        ll = prior.fit_info["log_likelihood"]
        info.update(iterations=prior.fit_info["iterations"], converged=prior.fit_info["converged"],
                    final_avg_log_likelihood=ll[-1] if ll else None,
                    warnings=len(prior.fit_info["warnings"]))
    return info


def run_experiment(cfg: ExperimentConfig, out_dir=None, ctx: Context | None = None) -> dict:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ctx = ctx or prepare(cfg)
    ev = cfg.evaluation
    tasks = [(p, b, s) for p in ev.policies for b in ev.budgets for s in range(ev.n_samples)]
    results = run_tasks(ctx, tasks, cfg.workers)
    elapsed = time.perf_counter() - t0

    write_metrics_csv(out / "metrics.csv", [r["row"] for r in results])
    (out / "masks").mkdir(exist_ok=True)
    for res in results:
        row = res["row"]
        tag = f"{row['policy']}_b{row['budget']}_s{row['sample_id']:04d}"
        write_mask_pgm(out / "masks" / f"{tag}.pgm", res["trace"].mask, ctx.shape)
        if ev.traces:
            write_trace(out / "traces" / f"{row['policy']}_b{row['budget']}" / f"s{row['sample_id']:04d}",
                        res, ctx)

    summary_rows = summarize(results, ctx)
    _render(out, ctx, results, summary_rows)
    summary = {
        "config": cfg.resolved(),
        "dataset": {"kind": cfg.dataset.kind, "shape": list(ctx.shape), "n_train": len(ctx.train),
                    "n_test": len(ctx.test), "provenance": ctx.test.provenance},
        "prior": _prior_info(ctx.prior),
        "n_actions": ctx.model.space.n_actions,
        "results": summary_rows,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    timings = {"total_s": elapsed, "per_task_s": elapsed / max(len(tasks), 1),
               "phases_s": _phase_totals(results)}
    (out / "timings.json").write_text(json.dumps(timings, indent=1))
    return summary


def _phase_totals(results) -> dict:
    tot: dict[str, float] = {}
    for r in results:
        for k, v in r["trace"].timings.items():
            tot[k] = tot.get(k, 0.0) + v
    return tot


def _render(out: Path, ctx: Context, results, summary_rows) -> None:
    plots = out / "plots"
    ev = ctx.cfg.evaluation
    for metric in ev.metrics:
        plotting.mae_bars(summary_rows, plots / f"{metric}.svg", metric=metric)
    groups = _group(results)
    for (policy, budget), items in groups.items():
        freq = np.mean([r["trace"].mask for r in items], axis=0)
        plotting.mask_heatmap(freq, ctx.shape, plots / f"mask_freq_{policy}_b{budget}.svg",
                              title=f"{policy}, {budget} actions")
    n_fig = min(ev.figure_samples, ev.n_samples)
    if n_fig:
        for budget in ev.budgets:
            panels, masks = {}, {}
            for policy in ev.policies:
                items = sorted(groups[(policy, budget)], key=lambda r: r["row"]["sample_id"])[:n_fig]
                panels[policy] = [r["recon"] for r in items]
                masks[policy] = [r["trace"].mask for r in items]
            targets = [ctx.test.tensors[i] for i in range(n_fig)]
            plotting.reconstruction_grid(targets, panels, ctx.shape, plots / f"recon_b{budget}.svg", masks)


# --- sweeps ---------------------------------------------------------------

SWEEP_AXES = {"n_particles": "n_particles", "N_p": "n_particles", "np": "n_particles",
              "sampling_rate": "sampling_rate", "sigma_y": "sigma_y"}


def run_sweep(cfg: ExperimentConfig, axis: str, values, out_dir=None) -> list[dict]:
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"must be one of {sorted(set(SWEEP_AXES))}")
    axis = SWEEP_AXES[axis]
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = prepare(cfg)
    n_act = ctx.model.space.n_actions
    merged = []
    for value in values:
        sub = copy.deepcopy(cfg)
        if axis == "n_particles":
            value = int(value)
            sub.agent.n_particles = value
        elif axis == "sigma_y":
            value = float(value)
            sub.agent.sigma_y = value
        else:
            value = float(value)
            if not 0 < value <= 1:
                raise ConfigError("values", "sampling rates must lie in (0, 1]")
            sub.evaluation.budgets = [max(1, int(round(value * n_act)))]
        sub_ctx = Context(sub, ctx.train, ctx.test, ctx.prior, build_model(sub), ctx.weights)
        summary = run_experiment(sub, out / f"{axis}={value}", sub_ctx)
        for r in summary["results"]:
            merged.append({"axis": axis, "value": value, "policy": r["policy"], "budget": r["budget"],
                           "n": r["n"],
                           **{f"{k}_{s}": r[k][s] for k in ("mae", "psnr", "ssim") for s in ("mean", "stderr")}})
    cols = ["axis", "value", "policy", "budget", "n", "mae_mean", "mae_stderr", "psnr_mean",
            "psnr_stderr", "ssim_mean", "ssim_stderr"]
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in merged:
            w.writerow([_fmt(r[c]) for c in cols])
    plotting.sweep_plot(merged, axis, out / "plots" / f"sweep_{axis}.svg")
    return merged


# --- benchmark ------------------------------------------------------------

BENCH_COUNTS = (4, 8, 16, 32, 64)


def _bench_once(ctx: Context, count: int, n_particles: int, repeats: int) -> dict:
    cfg = copy.deepcopy(ctx.cfg)
    cfg.agent.n_particles = n_particles
    acfg = agent_config(cfg, "ads", count + len(cfg.agent.init_actions))
    x = ctx.test.tensors[0]
    runs = []
    for r in range(repeats):
        t0 = time.perf_counter()
        tr = run_ads(acfg, ctx.prior, ctx.model, x, stream=r)
        tot = time.perf_counter() - t0
        runs.append({**tr.timings, "total": tot})
    med = {k: float(np.median([r[k] for r in runs])) for k in runs[0]}
    return {"count": count, "n_particles": n_particles, **med}


def linear_fit(x, y) -> tuple[float, float, float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def _write_bench_rows(path, rows) -> None:
    cols = ["count", "n_particles", "policy", "denoise", "guidance", "acquire", "total"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([c if c in ("count", "n_particles") else f"{c}_s" for c in cols])
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def run_bench(cfg: ExperimentConfig, out_dir=None, counts=BENCH_COUNTS, repeats: int = 3) -> dict:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = prepare(cfg)
    wlo, whi = cfg.agent.resolved_window()
    if max(counts) > whi - wlo + 1:
        raise ConfigError("agent.window", f"bench needs {max(counts)} acquisition steps")
    if max(counts) + len(cfg.agent.init_actions) > ctx.model.space.n_actions:
        raise ConfigError("measurement.action", "action space too small for the bench counts")
    # warm-up so one-off import and allocation costs stay out of the first row
    _bench_once(ctx, counts[0], cfg.agent.n_particles, 1)
    rows = [_bench_once(ctx, c, cfg.agent.n_particles, repeats) for c in counts]
    slope, intercept, r2 = linear_fit(counts, [r["policy"] for r in rows])
    base = _bench_once(ctx, max(counts), cfg.agent.n_particles, repeats)
    double = _bench_once(ctx, max(counts), 2 * cfg.agent.n_particles, repeats)
    ratio = double["policy"] / base["policy"] if base["policy"] > 0 else float("nan")

    _write_bench_rows(out / "bench.csv", rows)
    _write_bench_rows(out / "bench_particles.csv", [base, double])
    report = {"counts": list(counts), "policy_fit": {"slope_s": slope, "intercept_s": intercept, "r2": r2},
              "n_particles": cfg.agent.n_particles, "doubled_particles_policy_ratio": ratio,
              "T": cfg.agent.T, "repeats": repeats}
    (out / "bench.json").write_text(json.dumps(report, indent=1))
    plotting.bench_plot(counts, [r["policy"] for r in rows],
                        [r["denoise"] + r["guidance"] for r in rows], (slope, intercept, r2),
                        out / "plots" / "bench.svg")
    return report


# --- mask analysis --------------------------------------------------------

def analyze_masks(trace_dir, out_dir=None) -> list[dict]:
    """Mask-distribution entropy per (policy, budget) over a traces directory."""
    trace_dir = Path(trace_dir)
    metas = sorted(trace_dir.rglob("meta.json"))
    if not metas:
        raise FileNotFoundError(f"no traces under {trace_dir}")
    groups: dict[tuple[str, int], list[dict]] = {}
    for p in metas:
        m = json.loads(p.read_text())
        groups.setdefault((m["policy"], m["budget"]), []).append(m)
    out = Path(out_dir) if out_dir else trace_dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    report = []
    for (policy, budget), items in sorted(groups.items()):
        items.sort(key=lambda m: m["sample_id"])
        n_act = items[0]["n_actions"]
        masks = np.zeros((len(items), n_act), dtype=np.uint8)
        for i, m in enumerate(items):
            masks[i, m["actions"]] = 1
        p, ent = mask_distribution_entropy(masks)
        labels = [m["label"] for m in items]
        entry = {"policy": policy, "budget": budget, "n": len(items), "mean_entropy_bits": ent,
                 "inclusion_probability": p.tolist()}
        if all(lab >= 0 for lab in labels):
            entry["nn_label_agreement"] = nearest_neighbour_agreement(masks, labels)
        report.append(entry)
        shape = items[0]["shape"]
        if items[0].get("n_actions") == shape[0] * shape[1]:
            plotting.mask_heatmap(p, shape, out / f"inclusion_{policy}_b{budget}.svg",
                                  title=f"{policy}: {ent:.3f} bits")
    (out / "mask_entropy.json").write_text(json.dumps(report, indent=1))
    with open(out / "mask_entropy.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["policy", "budget", "n", "mean_entropy_bits", "nn_label_agreement"])
        for e in report:
            w.writerow([e["policy"], e["budget"], e["n"], _fmt(e["mean_entropy_bits"]),
                        _fmt(e.get("nn_label_agreement", float("nan")))])
    return report
