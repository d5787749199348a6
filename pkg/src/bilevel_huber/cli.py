"""Command line harness: ``denoise``, ``train``, ``gamma`` and ``compare``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bilevel import LowerLevelFailure, UpperObjective, train, write_records_csv
from .config import ExperimentConfig, load_config
from .experiments import (
    best_scalar_huber,
    best_scalar_tgv,
    load_clean,
    noisy_datum,
    resolve_field,
    trained_gamma,
)
from .fieldio import write_heatmap, write_png, write_raw
from .gamma import train_tikhonov_weight, gamma_from_weight
from .huber import lower_energy
from .lower import NewtonConfig, NewtonConvergenceError, solve_lower
from .metrics import psnr, ssim
from .tgv import TgvWeights, solve_tgv

log = logging.getLogger("bilevel_huber")

EXIT_SOLVER = 2


class SolverFailure(RuntimeError):
    pass


# -- helpers ----------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _prepare(cfg: ExperimentConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    clean = load_clean(cfg.input, cfg.size)
    g = noisy_datum(clean, cfg.noise, cfg.seed)
    write_png(out / "noisy.png", g)
    return out, clean, g


def _newton(cfg) -> NewtonConfig:
    return NewtonConfig(newton_tol=cfg.newton_tol)


def _gamma(cfg, g, out: Path | None = None):
    if str(cfg.gamma) == "trained":
        gamma, alpha_tilde = trained_gamma(g, cfg.tikhonov())
        if out is not None:
            write_raw(out / "alpha_tilde.raw", alpha_tilde)
            write_raw(out / "gamma.raw", gamma)
        return gamma
    return resolve_field(cfg.gamma, g.shape, "gamma")


def _alpha(cfg, shape):
    if cfg.alpha is None:
        return np.full(shape, cfg.bilevel().initial_alpha(cfg.order))
    return resolve_field(cfg.alpha, shape, "alpha")


def _quality(u, clean) -> dict:
    return {"psnr": psnr(u, clean), "ssim": ssim(u, clean)}


# -- commands -----------------------------------------------------------------


def cmd_denoise(cfg: ExperimentConfig) -> dict:
    """Denoise with fixed weights; writes PNG, raw field, metrics and config."""
    out, clean, g = _prepare(cfg)
    if cfg.regularizer == "tgv":
        weights = TgvWeights(
            resolve_field(cfg.tgv_alpha0, g.shape, "tgv_alpha0"),
            resolve_field(cfg.tgv_alpha1, g.shape, "tgv_alpha1"),
        )
        res = solve_tgv(g, weights, iters=cfg.tgv_iters)
        u = res.u
        metrics = {"energy": res.energy, "gap": res.gap}
    else:
        alpha = _alpha(cfg, g.shape)
        gamma = _gamma(cfg, g, out)
        try:
            st = solve_lower(g, alpha, gamma, cfg.order, _newton(cfg))
        except NewtonConvergenceError as exc:
            raise SolverFailure(str(exc)) from exc
        u = st.u
        metrics = {
            "energy": lower_energy(u, g, alpha, gamma, cfg.order),
            "residual_primal": st.residual_primal,
            "residual_dual": st.residual_dual,
            "newton_iters": st.newton_iters,
        }
    metrics.update(_quality(u, clean))
    metrics["noisy_psnr"] = psnr(g, clean)
    write_png(out / "denoised.png", u)
    write_raw(out / "denoised.raw", u)
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_train(cfg: ExperimentConfig) -> dict:
    """Bilevel weight training; writes alpha, reconstruction, trace CSV, metrics."""
    if cfg.regularizer == "tgv":
        raise ValueError("bilevel training supports huber_tv and huber_tv2 only")
    out, clean, g = _prepare(cfg)
    gamma = _gamma(cfg, g, out)
    objective = UpperObjective(cfg.objective, clean if cfg.objective == "psnr" else None, cfg.sigma2, cfg.n_w)
    try:
        res = train(g, gamma, cfg.order, objective, cfg.bilevel(), _newton(cfg), ground_truth=clean)
    except LowerLevelFailure as exc:
        write_records_csv(out / "trace.csv", exc.records)
        raise SolverFailure(str(exc)) from exc
    write_raw(out / "alpha.raw", res.alpha)
    write_heatmap(out / "alpha.png", res.alpha)
    write_png(out / "denoised.png", res.u)
    write_raw(out / "denoised.raw", res.u)
    write_records_csv(out / "trace.csv", res.records)
    metrics = _quality(res.u, clean)
    metrics.update(
        objective=res.records[-1].objective,
        initial_objective=res.records[0].objective,
        stalled=res.stalled,
        energy=lower_energy(res.u, g, res.alpha, gamma, cfg.order),
        alpha_min=float(res.alpha.min()),
        alpha_max=float(res.alpha.max()),
    )
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_gamma(cfg: ExperimentConfig) -> dict:
    """Train the auxiliary Tikhonov weight and emit ``gamma = s / alpha_tilde``."""
    out, clean, g = _prepare(cfg)
    res = train_tikhonov_weight(g, cfg.tikhonov(), ground_truth=clean)
    gamma = gamma_from_weight(res.alpha, cfg.s)
    write_raw(out / "alpha_tilde.raw", res.alpha)
    write_heatmap(out / "alpha_tilde.png", res.alpha)
    write_raw(out / "gamma.raw", gamma)
    write_heatmap(out / "gamma.png", gamma)
    write_records_csv(out / "trace.csv", res.records)
    metrics = {
        "objective": res.records[-1].objective,
        "alpha_tilde_min": float(res.alpha.min()),
        "alpha_tilde_max": float(res.alpha.max()),
        "gamma_min": float(gamma.min()),
        "gamma_max": float(gamma.max()),
    }
    _write_json(out / "metrics.json", metrics)
    return metrics


def _run_method(method: str, cfg: ExperimentConfig, g, clean):
    grid = cfg.scalar_grid
    newton = _newton(cfg)
    if method in ("scalar_tv", "scalar_tv2"):
        order = 1 if method == "scalar_tv" else 2
        gamma = resolve_field(cfg.gamma, g.shape, "gamma") if str(cfg.gamma) != "trained" else _gamma(cfg, g)
        a, u, _ = best_scalar_huber(g, clean, order, gamma, grid, newton)
        return u, f"alpha={a:.4g}"
    if method == "scalar_tgv":
        (a0, a1), u, _ = best_scalar_tgv(g, clean, grid[::3], iters=cfg.tgv_iters)
        return u, f"alpha0={a0:.4g} alpha1={a1:.4g}"
    order = 1 if method == "bilevel_tv" else 2
    if method == "bilevel_tv2_trained_gamma":
        gamma, _ = trained_gamma(g, cfg.tikhonov())
    else:
        gamma = resolve_field(cfg.gamma, g.shape, "gamma") if str(cfg.gamma) != "trained" else _gamma(cfg, g)
    objective = UpperObjective(cfg.objective, clean if cfg.objective == "psnr" else None, cfg.sigma2, cfg.n_w)
    res = train(g, gamma, order, objective, cfg.bilevel(), newton)
    return res.u, f"objective={res.records[-1].objective:.6g}"


COMPARE_FIELDS = ["image", "method", "psnr", "ssim", "wall_time", "params", "best_psnr", "best_ssim", "error"]


def cmd_compare(cfg: ExperimentConfig) -> list[dict]:
    """Run the (image x method) matrix and tabulate PSNR, SSIM and wall time.

    A failing cell is recorded with its error message and the run continues.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    rows = []
    for image in cfg.images:
        image_rows = []
        try:
            clean = load_clean(image, cfg.size)
            g = noisy_datum(clean, cfg.noise, cfg.seed)
        except Exception as exc:  # noqa: BLE001 - recorded per row
            for method in cfg.methods:
                rows.append(_row(image, method, error=f"{type(exc).__name__}: {exc}"))
            continue
        for method in cfg.methods:
            start = time.perf_counter()
            try:
                u, params = _run_method(method, cfg, g, clean)
                q = _quality(u, clean)
                row = _row(image, method, q["psnr"], q["ssim"], time.perf_counter() - start, params)
            except Exception as exc:  # noqa: BLE001
                log.warning("%s / %s failed: %s", image, method, exc)
                row = _row(image, method, wall_time=time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}")
            image_rows.append(row)
        for key in ("psnr", "ssim"):
            values = [r[key] for r in image_rows if not math.isnan(r[key])]
            if values:
                top = max(values)
                for r in image_rows:
                    r[f"best_{key}"] = "*" if r[key] == top else ""
        rows.extend(image_rows)

    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    (out / "compare.txt").write_text(format_table(rows))
    return rows


def _row(image, method, psnr_value=math.nan, ssim_value=math.nan, wall_time=math.nan, params="", error=""):
    return {
        "image": image,
        "method": method,
        "psnr": psnr_value,
        "ssim": ssim_value,
        "wall_time": wall_time,
        "params": params,
        "best_psnr": "",
        "best_ssim": "",
        "error": error,
    }


def format_table(rows: list[dict]) -> str:
    """Plain-text table; ``*`` marks the best PSNR / SSIM per image."""
    header = f"{'image':<34} {'method':<26} {'PSNR':>9} {'SSIM':>8} {'time[s]':>8}  notes"
    lines = [header, "-" * len(header)]
    for r in rows:
        p = f"{r['psnr']:.2f}{r['best_psnr'] or ' '}" if not math.isnan(r["psnr"]) else "-"
        s = f"{r['ssim']:.4f}{r['best_ssim'] or ' '}" if not math.isnan(r["ssim"]) else "-"
        t = f"{r['wall_time']:.2f}" if not math.isnan(r["wall_time"]) else "-"
        note = r["error"] or r["params"]
        lines.append(f"{r['image']:<34} {r['method']:<26} {p:>9} {s:>8} {t:>8}  {note}")
    return "\n".join(lines) + "\n"


# -- argument parsing -----------------------------------------------------------


COMMANDS = {"denoise": cmd_denoise, "train": cmd_train, "gamma": cmd_gamma, "compare": cmd_compare}


def _flag_type(annotation):
    args = set(typing.get_args(annotation)) - {type(None), Ellipsis}
    if typing.get_origin(annotation) is tuple:
        return {"nargs": "+", "type": float if float in args else str}
    if annotation is int:
        return {"type": int}
    if annotation is float or args == {float}:
        return {"type": float}
    return {"type": str}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilevel-huber", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    hints = typing.get_type_hints(ExperimentConfig)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").splitlines()[0])
        p.add_argument("--config", help="JSON file with ExperimentConfig keys")
        p.add_argument("--order", type=int, choices=(1, 2), help="shorthand for --regularizer huber_tv / huber_tv2")
        for f in fields(ExperimentConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, **_flag_type(hints[f.name]))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)}
    if args.order is not None:
        if overrides["regularizer"] not in (None, "huber_tv", "huber_tv2"):
            print("error: --order conflicts with --regularizer", file=sys.stderr)
            return 1
        overrides["regularizer"] = "huber_tv" if args.order == 1 else "huber_tv2"
    try:
        cfg = load_config(args.config, overrides)
        result = COMMANDS[args.command](cfg)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "compare":
        print(format_table(result), end="")
    else:
        print(json.dumps(_jsonable(result), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
