"""Command-line interface: ``deeprep degrade | inpaint | evaluate | ablate``.

Every command prints one JSON summary line on stdout and writes its
materialised run configuration next to its main output as ``<output>.run.json``.
Failures print one JSON error record on stderr and exit nonzero (1 for runtime
errors, 2 for usage errors).
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click

log = logging.getLogger("deeprep")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _cap_threads(n: int | None):
    # only effective when numpy has not been imported yet, which holds for the console script
    if n is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


_handler: logging.Handler | None = None


def _setup_logging(level: int):
    # one handler on the package logger, rebuilt per invocation so it follows the current stderr
    global _handler
    if _handler is not None:
        log.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(_handler)
    log.setLevel(level)
    log.propagate = False


def _emit(record: dict):
    click.echo(json.dumps(record, sort_keys=True))


def _int_triple(text: str, what: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"{what} must be comma-separated integers, got {text!r}")
    if len(vals) != 3:
        raise click.BadParameter(f"{what} needs exactly three values, got {text!r}")
    return vals


@click.group()
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Cap BLAS/OpenMP threads (1 = reproducible).")
@click.option("-v", "--verbose", count=True, help="Log progress to stderr (-vv for debug).")
def cli(threads, verbose):
    """Hyperspectral inpainting with 3DeepRep and a TNN baseline."""
    _cap_threads(threads)
    _setup_logging(logging.WARNING - 10 * min(verbose, 2))


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Ground-truth tensor file.")
@click.option("--case", type=click.Choice(["point", "stripe", "deadline", "mixed"]), default="point", show_default=True)
@click.option("--mr", type=click.FloatRange(0, 1), default=0.9, show_default=True, help="Missing rate (point, stripe).")
@click.option("--group-rates", default="0.2,0.1,0.3,0.4", show_default=True, help="Deadline rates per band group.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-mask", required=True, type=click.Path(dir_okay=False))
@click.option("--out-observed", required=True, type=click.Path(dir_okay=False))
def degrade(in_path, case, mr, group_rates, seed, out_mask, out_observed):
    """Simulate missing data and write the mask and observed tensor."""
    from . import degradation, fileio, tensor_core as tc

    try:
        rates = tuple(float(r) for r in group_rates.split(","))
    except ValueError:
        raise click.BadParameter(f"group rates must be comma-separated numbers, got {group_rates!r}")
    spec = degradation.DegradeSpec(case=case, mr=mr, group_rates=rates, seed=seed)
    truth = fileio.load_tensor(in_path)
    mask = degradation.generate_mask(truth.shape, spec)
    fileio.save_mask(mask, out_mask)
    fileio.save_tensor(degradation.degrade(truth, mask), out_observed)
    cfg = fileio.RunConfig(degrade=spec, outputs={"truth": in_path, "mask": out_mask, "observed": out_observed})
    fileio.save_config(cfg, fileio.sidecar(out_observed, "run.json"))
    _emit({"command": "degrade", "case": case, "seed": seed, "missing_rate": tc.missing_rate(mask), "dims": list(mask.shape)})


@cli.command()
@click.option("--method", type=click.Choice(["3deeprep", "tnn"]), default=None, help="Overrides the config's method.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON run config.")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Observed tensor file.")
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides hyper.seed.")
@click.option("--iterations", type=click.IntRange(min=0), default=None, help="Overrides hyper.iterations.")
def inpaint(method, config_path, in_path, mask_path, out, seed, iterations):
    """Complete an observed tensor; writes the result clamped to [0, 1] and a loss trace."""
    import dataclasses

    import numpy as np

    from . import fileio, model, tnn

    cfg = fileio.load_config(config_path) if config_path else fileio.RunConfig()
    if method is not None:
        cfg.method = method
    overrides = {k: v for k, v in (("seed", seed), ("iterations", iterations)) if v is not None}
    if overrides:
        cfg.hyper = dataclasses.replace(cfg.hyper, **overrides)
    o = fileio.load_tensor(in_path)
    m = fileio.load_mask(mask_path)
    if m.shape != o.shape:
        raise ValueError(f"mask shape {m.shape} does not match tensor shape {o.shape}")
    trace_path = fileio.sidecar(out, "loss.jsonl")

    if cfg.method == "tnn":
        res = tnn.tnn_complete(o, m, cfg.admm)
        x = res.x
        trace = [{"iteration": i + 1, "loss": v} for i, v in enumerate(res.objective)]
        summary = {"iterations": res.iterations, "converged": res.converged}
    else:
        res = model.train(o, m, cfg.hyper, cfg.admm, callback=_progress)
        x = res.x
        trace = res.history
        summary = {"iterations": len(res.history) - 1, "final_loss": res.history[-1]["loss"]}

    fileio.save_tensor(np.clip(x, 0.0, 1.0), out)
    fileio.write_jsonl(trace_path, trace)
    cfg.outputs = {"observed": in_path, "mask": mask_path, "recovered": out, "loss_trace": str(trace_path)}
    fileio.save_config(cfg, fileio.sidecar(out, "run.json"))
    _emit({"command": "inpaint", "method": cfg.method, "out": out, **summary})


def _progress(rec: dict):
    if rec["iteration"] % 100 == 0:
        log.info("iteration %d  loss %.6g", rec["iteration"], rec["loss"])


@cli.command()
@click.option("--recovered", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", required=True, type=click.Path(dir_okay=False), help="JSONL file; one record is appended.")
@click.option("--observed", type=click.Path(exists=True, dir_okay=False), default=None, help="Adds an observed-vs-recovered comparison.")
@click.option("--loss-trace", type=click.Path(exists=True, dir_okay=False), default=None, help="Loss JSONL from inpaint, for the loss figure.")
@click.option("--psnr-mode", type=click.Choice(["band", "global"]), default="band", show_default=True)
@click.option("--bands", default=None, help="1-based r,g,b bands for false colour [default: 70,40,10 when available].")
@click.option("--ppm", type=click.Path(dir_okay=False), default=None, help="Also export the recovered false-colour PPM.")
@click.option("--figures/--no-figures", default=True, show_default=True, help="Render PNG figures beside the report.")
@click.option("--dataset", default="", help="Free-form metadata recorded in the report.")
@click.option("--case", default="", help="Free-form metadata recorded in the report.")
@click.option("--seed", type=int, default=None, help="Metadata recorded in the report.")
def evaluate(recovered, truth, report, observed, loss_trace, psnr_mode, bands, ppm, figures, dataset, case, seed):
    """PSNR / SSIM / SAM of a recovered tensor against ground truth."""
    from . import fileio, metrics

    x = fileio.load_tensor(recovered)
    ref = fileio.load_tensor(truth)
    rep = metrics.evaluate(x, ref, psnr_mode=psnr_mode, dataset=dataset, case=case, seed=seed,
                           recovered=recovered, truth=truth)
    record = rep.to_dict()
    obs = None
    if observed:
        obs = fileio.load_tensor(observed)
        record["observed_psnr"] = metrics.psnr(obs, ref, mode=psnr_mode)
    fileio.append_jsonl(report, record)

    rgb = _int_triple(bands, "bands") if bands else fileio.default_bands(ref.shape[2])
    if ppm:
        fileio.export_false_color(x, rgb, ppm)
    written = []
    if figures:
        from . import plotting

        per_band = {"recovered": rep.psnr_per_band}
        panels = {"truth": ref, "recovered": x}
        if obs is not None:
            per_band = {"observed": metrics.psnr_per_band(obs, ref), **per_band}
            panels = {"observed": obs, **panels}
        written.append(plotting.plot_band_psnr(per_band, fileio.sidecar(report, "psnr_bands.png")))
        written.append(plotting.plot_false_color_panels(panels, fileio.sidecar(report, "false_color.png"), rgb))
        if loss_trace:
            written.append(plotting.plot_loss_curve(fileio.read_jsonl(loss_trace), fileio.sidecar(report, "loss.png")))
    _emit({"command": "evaluate", "psnr": rep.psnr, "ssim": rep.ssim, "sam": rep.sam,
           "report": report, "figures": [str(p) for p in written]})


@cli.command()
@click.option("--direction", type=click.Choice(["1", "2", "3", "3d"]), required=True)
@click.option("--dims", default="200,200,80", show_default=True, help="n1,n2,n3 for the parameter count.")
@click.option("--k", type=click.IntRange(min=1), default=1, show_default=True, help="Latent expansion ratio.")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None, help="Also train and score on this tensor.")
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="JSONL file for the ablation record.")
@click.option("--iterations", type=click.IntRange(min=0), default=None)
def ablate(direction, dims, k, truth, mask_path, config_path, report, iterations):
    """Parameter count (and optionally PSNR) of a single-direction or full model."""
    import dataclasses

    from . import degradation, fileio, metrics, model

    dirs = model.ALL_DIRECTIONS if direction == "3d" else (int(direction),)
    shape = _int_triple(dims, "dims")
    record = {"command": "ablate", "direction": direction, "k": k}
    if truth:
        if not mask_path:
            raise click.UsageError("--truth needs --mask")
        ref = fileio.load_tensor(truth)
        m = fileio.load_mask(mask_path)
        shape = ref.shape
        cfg = fileio.load_config(config_path) if config_path else fileio.RunConfig()
        extra = {"iterations": iterations} if iterations is not None else {}
        cfg.hyper = dataclasses.replace(cfg.hyper, directions=dirs, k=k, **extra)
        o = degradation.degrade(ref, m)
        res = model.train(o, m, cfg.hyper, cfg.admm, callback=_progress)
        record.update(psnr=metrics.psnr(res.x, ref), tnn_psnr=metrics.psnr(res.tnn_x, ref),
                      n_params=res.params.size())
        if report:
            cfg.outputs = {"truth": truth, "mask": mask_path, "report": report}
            fileio.save_config(cfg, fileio.sidecar(report, "run.json"))
    record.update(dims=list(shape), param_count=model.param_count(shape, k, dirs))
    log.info("direction %s on %s with k=%d: %d parameters", direction, tuple(shape), k, record["param_count"])
    if report:
        fileio.append_jsonl(report, record)
    _emit(record)


def _error_record(exc: BaseException, argv) -> str:
    command = next((a for a in argv if not a.startswith("-")), None)
    message = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
    return json.dumps({"status": "error", "command": command, "error": type(exc).__name__,
                       "message": " ".join(message.split())})


def main(argv=None) -> int:
    """Console entry point. Returns the exit status instead of raising ``SystemExit``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cli.main(args=argv, prog_name="deeprep", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.NoArgsIsHelpError as e:
        # a bare invocation asks for help rather than failing
        click.echo(e.ctx.get_help())
        return 0
    except click.exceptions.Abort:
        click.echo(json.dumps({"status": "error", "command": None, "error": "Abort", "message": "aborted"}), err=True)
        return 1
    except click.ClickException as e:
        click.echo(_error_record(e, argv), err=True)
        return 2 if isinstance(e, click.UsageError) else 1
    except Exception as e:  # noqa: BLE001 - every failure becomes one machine-readable line
        log.debug("failure", exc_info=True)
        click.echo(_error_record(e, argv), err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
