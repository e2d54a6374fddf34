"""Pipeline stages. Each stage reads its inputs from the run directory and writes files back."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from romda.adapt import finetune, second_moment_check
from romda.enkf import AnalysisResult
from romda.errors import ContractError
from romda.metrics import rank_correlation, UndefinedCorrelation, write_metric_rows
from romda.numerics.rng import Rng
from romda.pipeline import svg
from romda.pipeline.config import PipelineConfig
from romda.pipeline.experiment import evaluate_grid, sensor_setup, twin_experiment
from romda.rom import RomModel, train
from romda.rom.checkpoint import load_model, save_model
from romda.sensing import SensorLayout, save_basis
from romda.synthflow import build_corpus, load_corpus, spatial_modes, split_even_odd, wake_mask

log = logging.getLogger(__name__)

STAGES = ("generate", "train", "evaluate", "place-sensors", "assimilate", "finetune", "report")

CORPUS = "corpus"
CHECKPOINT = "model.ckpt"
CHECKPOINT_FT = "model_finetuned.ckpt"
SENSORS = "sensors.json"
ANALYSIS = "analysis"


class MissingInput(FileNotFoundError):
    """A stage input produced by an earlier stage is absent."""


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingInput(f"{path} not found; run the '{stage}' stage first")
    return path


def _xi_tag(xi: float) -> str:
    return f"{xi:g}".replace(".", "p")


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _corpus(run: Path):
    _need(run / CORPUS / "manifest.json", "generate")
    return load_corpus(run / CORPUS)


def _train_split(corpus):
    return [split_even_odd(s)[0] for s in corpus.train]


def _eval_splits(corpus):
    return [split_even_odd(s)[1] for s in corpus.eval]


def _target(cfg: PipelineConfig, corpus):
    """Even (assimilation) and odd (evaluation) halves of the target trajectory."""
    return split_even_odd(corpus.eval_at(cfg.xi_target))


# ------------------------------------------------------------------ stages

def cmd_generate(cfg: PipelineConfig, run: Path) -> list[Path]:
    xi_eval = list(cfg.xi_eval)
    if cfg.xi_target not in xi_eval:
        xi_eval.append(cfg.xi_target)
    build_corpus(cfg.xi_train, xi_eval, cfg.flow_config(), out_dir=run / CORPUS)
    return sorted((run / CORPUS).iterdir())


def cmd_train(cfg: PipelineConfig, run: Path) -> list[Path]:
    trajs = _train_split(_corpus(run))
    X = np.concatenate([t.states for t in trajs])
    model = RomModel.create(cfg.rom_hyper(X.shape[1]), X, Rng(cfg.seeds.init))
    model, history = train(model, trajs, Rng(cfg.seeds.train))
    ckpt = save_model(model, run / CHECKPOINT)
    hist = _write_csv(run / "train_history.csv", ["epoch", "loss"], enumerate(history))
    chart = svg.write_svg(run / "train_history.svg",
                          svg.line_chart({"loss": np.log10(history)}, "Training loss",
                                         "epoch", "log10 loss"))
    return [ckpt, hist, chart]


def _evaluation_rows(model, cfg, corpus):
    return evaluate_grid(model, _eval_splits(corpus), cfg.n_members, cfg.seeds.forecast)


def cmd_evaluate(cfg: PipelineConfig, run: Path) -> list[Path]:
    corpus = _corpus(run)
    model = load_model(_need(run / CHECKPOINT, "train"))
    evals = _evaluation_rows(model, cfg, corpus)
    out = [_write_csv(run / "evaluation.csv", ["xi", "w2", "uq_scalar", "recon_l1_pct"],
                      [(e.xi, e.w2, e.uq, e.recon_l1) for e in evals])]
    for e in evals:
        out.append(svg.write_svg(
            run / f"energy_xi{_xi_tag(e.xi)}.svg",
            svg.line_chart({"prediction": e.energy_pred, "truth": e.energy_true},
                           f"Kinetic energy at xi={e.xi:g}", "time step", "energy")))
    w2 = np.array([e.w2 for e in evals])
    uq = np.array([e.uq for e in evals])
    out.append(svg.write_svg(
        run / "w2_vs_uq.svg",
        svg.bar_chart([f"{e.xi:g}" for e in evals],
                      {"W2 / max": w2 / max(w2.max(), 1e-300), "uq / max": uq / max(uq.max(), 1e-300)},
                      "Energy distance and uncertainty", "xi", "normalised value")))
    return out


def cmd_place_sensors(cfg: PipelineConfig, run: Path) -> list[Path]:
    corpus = _corpus(run)
    X = np.concatenate([t.states for t in _train_split(corpus)])
    basis, layout = sensor_setup(X, cfg.n_sensors)
    out = [layout.save(run / SENSORS)]
    save_basis(basis, run, stem="pod")
    out += [run / "pod_modes.rmx", run / "pod_singular_values.json"]
    flow = cfg.flow_config()
    n = flow.nx * flow.ny
    env = spatial_modes(flow).envelope
    for comp, offset in (("u", 0), ("v", n)):
        marks = [divmod(int(i) - offset, flow.nx) for i in layout.indices if offset <= i < offset + n]
        out.append(svg.write_svg(run / f"sensors_{comp}.svg",
                                 svg.field_map(env, marks, f"Sensors on {comp} over the wake envelope")))
    return out


def cmd_assimilate(cfg: PipelineConfig, run: Path) -> list[Path]:
    corpus = _corpus(run)
    model = load_model(_need(run / CHECKPOINT, "train"))
    layout = SensorLayout.load(_need(run / SENSORS, "place-sensors"))
    truth, _ = _target(cfg, corpus)
    twin = twin_experiment(model, truth, layout, cfg.epsilon, cfg.n_members,
                           cfg.seeds.forecast, cfg.seeds.observe, cfg.workers)
    twin.analysis.save(run / ANALYSIS, cfg.epsilon, layout.n_obs)
    f_mse, a_mse = twin.forecast_mse_t(), twin.analysis_mse_t()
    err = _write_csv(run / "assimilation_error.csv", ["t", "forecast_mse", "analysis_mse"],
                     [(int(t), f_mse[t], a_mse[t]) for t in range(len(f_mse))])
    var = twin.analysis.variance.mean(axis=0)
    mask = wake_mask(cfg.flow_config(), 0.5)
    summary = _write_csv(run / "assimilation_summary.csv", ["metric", "value"], [
        ("mse_ratio", twin.mse_ratio()),
        ("sensor_mae", twin.sensor_mae()),
        ("analysis_variance_wake", float(var[mask].sum())),
        ("analysis_variance_outside", float(var[~mask].sum())),
    ])
    chart = svg.write_svg(run / "assimilation_error.svg",
                          svg.line_chart({"forecast": np.log10(f_mse + 1e-300),
                                          "analysis": np.log10(a_mse + 1e-300)},
                                         "Forecast and filter error", "time step", "log10 MSE"))
    return [run / ANALYSIS / n for n in AnalysisResult.FILES] + [err, summary, chart]


def cmd_finetune(cfg: PipelineConfig, run: Path) -> list[Path]:
    corpus = _corpus(run)
    model = load_model(_need(run / CHECKPOINT, "train"))
    mode = cfg.retrain_mode()
    truth, _ = _target(cfg, corpus)
    if mode.source == "analysis":
        data = AnalysisResult.load(_need(run / ANALYSIS, "assimilate"))
    else:
        data = truth
    tuned, history = finetune(model, mode, data, _train_split(corpus), Rng(cfg.seeds.finetune),
                              xi=cfg.xi_target)
    ckpt = save_model(tuned, run / CHECKPOINT_FT)
    before = _evaluation_rows(model, cfg, corpus)
    after = _evaluation_rows(tuned, cfg, corpus)
    cmp_csv = _write_csv(run / "finetune_comparison.csv",
                         ["xi", "w2_before", "w2_after", "uq_before", "uq_after",
                          "recon_l1_before", "recon_l1_after"],
                         [(b.xi, b.w2, a.w2, b.uq, a.uq, b.recon_l1, a.recon_l1)
                          for b, a in zip(before, after)])
    hist = _write_csv(run / "finetune_history.csv", ["epoch", "loss"], enumerate(history))
    chart = svg.write_svg(run / "finetune_w2.svg",
                          svg.bar_chart([f"{b.xi:g}" for b in before],
                                        {"before": [b.w2 for b in before],
                                         "after": [a.w2 for a in after]},
                                        f"Energy distance before and after {mode.variant}",
                                        "xi", "W2"))
    return [ckpt, cmp_csv, hist, chart]


def _read_rows(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg: PipelineConfig, run: Path) -> list[Path]:
    tuned = load_model(_need(run / CHECKPOINT_FT, "finetune"))
    analysis = AnalysisResult.load(_need(run / ANALYSIS, "assimilate"))
    moments = second_moment_check(tuned, analysis, cfg.xi_target)
    out = [moments.write_csv(run / "moment_report.csv")]
    lam_t = moments.lambda_vae
    out.append(svg.write_svg(run / "moment_report.svg", svg.line_chart(
        {**{f"lambda z{j}": np.log10(lam_t[:, j]) for j in range(lam_t.shape[1])},
         **{f"sigma z{j}": np.log10(moments.sigma_ens[:, j] + 1e-300) for j in range(lam_t.shape[1])}},
        "Encoder variance vs analysis spread", "time step", "log10 variance")))

    rows = []
    evals = _read_rows(_need(run / "evaluation.csv", "evaluate"))
    for r in evals:
        for key in ("w2", "uq_scalar", "recon_l1_pct"):
            rows.append((key, float(r["xi"]), float(r[key])))
    try:
        rho = rank_correlation([float(r["uq_scalar"]) for r in evals], [float(r["w2"]) for r in evals])
    except (UndefinedCorrelation, ContractError):
        rho = float("nan")
    rows.append(("spearman_uq_w2", float("nan"), rho))
    for r in _read_rows(_need(run / "assimilation_summary.csv", "assimilate")):
        rows.append((r["metric"], cfg.xi_target, float(r["value"])))
    for r in _read_rows(_need(run / "finetune_comparison.csv", "finetune")):
        rows.append(("w2_finetuned", float(r["xi"]), float(r["w2_after"])))
        rows.append(("recon_l1_pct_finetuned", float(r["xi"]), float(r["recon_l1_after"])))
    med = moments.time_median()
    for j, v in enumerate(med):
        rows.append((f"moment_median_rel_discrepancy_z{j}", cfg.xi_target, float(v)))
    out.append(write_metric_rows(run / "report_metrics.csv", rows))
    return out


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "place-sensors": cmd_place_sensors,
    "assimilate": cmd_assimilate,
    "finetune": cmd_finetune,
    "report": cmd_report,
}
