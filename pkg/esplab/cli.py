"""
Command-line front end for ESP Lab

Commands: certify, eval, derivative-check, forgetting, volterra-extract,
volterra-eval, bound-check, sweep.

Exit codes: 0 on success, 2 when --require-certified is set and the
verdict is not certified, 1 on any error.

CSV schemas:
  eval              t, x0..x{N-1}, y0..y{d-1}
  derivative-check  t, v0.., fd0..
  forgetting        t, gap, envelope
  volterra-eval     t, y0..y{d-1}
  bound-check       rho, trial, ratio, error, bound, violation
  sweep             scale, lambda, quantity, value
"""

import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from esplab import __version__
from esplab.certify import (
    Verdict,
    certify_bounded_inputs,
    certify_contraction,
    certify_contraction_p,
    certify_esn_product,
    certify_linear_series,
    certify_sas_series,
    compact_target_esp,
    differential_forgetting_bound,
)
from esplab.config import DEFAULT_CONFIG, load_config, merge_overrides
from esplab.errors import EsplabError, InvalidInput, Unsupported
from esplab.evaluate import (
    directional_derivative,
    eval_filter,
    functional_partials,
    input_forgetting_experiment,
    mode_from_name,
    state_forgetting_experiment,
)
from esplab.export_formats import ExportFormats
from esplab.reservoir import SamplingSpec, load_system, system_from_dict
from esplab.seqspace import NormSpec, WeightKind, WeightingSequence, Window, norm, parse_weighting
from esplab.volterra import (
    VolterraKernelSet,
    bound_check_experiment,
    eval_series_path,
    extract_exact,
    extract_fd,
)

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTING = '{"kind": "geometric", "lambda": 0.5}'
CONDITIONS = ("contraction", "contraction-p", "esn-product", "linear-series", "sas-series",
              "compact", "bounded-inputs")


# ============ HELPERS ============

def _parse_vector(text):
    if text is None:
        return None
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise InvalidInput(f"expected comma-separated numbers, got {text!r}")


def _parse_grid(text):
    values = _parse_vector(text)
    return [1.0] if values is None else [float(v) for v in values]


def _sampling(config):
    return SamplingSpec(config["sampling_points"], config["state_box"], config["input_box"], config["seed"])


def _mode(config, x_init=None):
    return mode_from_name(config["mode"], x_init, config["max_iter"], config["tol"])


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}")


def _write(output, title, header, rows, summary):
    if output:
        written = ExportFormats(title, header, rows, summary).export(output)
        click.echo(f"Results written to {written}")


def _write_json(output, data):
    text = json.dumps(data, indent=2)
    if output:
        Path(output).write_text(text + "\n")
        click.echo(f"Results written to {output}")
    else:
        click.echo(text)


def _format(value):
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _table(pairs):
    pairs = list(pairs)
    width = max(len(k) for k, _ in pairs)
    for key, value in pairs:
        click.echo(f"{key:<{width}}  {_format(value)}")


def print_certificate(cert):
    """One-screen verdict table"""
    pairs = [("condition", cert.condition.value),
             ("verdict", cert.verdict.value.upper()),
             ("lhs_value", cert.lhs_value)]
    for key in ("filter_lipschitz", "forgetting_scale", "output_lipschitz"):
        value = getattr(cert, key)
        if value is not None:
            pairs.append((key, value))
    for key, value in cert.details.items():
        pairs.append((key, value))
    if cert.constants is not None:
        pairs.append(("constants", cert.constants.provenance.value))
    _table(pairs)
    for note in cert.notes:
        click.echo(f"  - {note}")


def _certificate(sys_, w, condition, config, p, input_bound, terms):
    sampling = _sampling(config)
    if condition == "contraction":
        return certify_contraction(sys_, w, sampling)
    if condition == "contraction-p":
        return certify_contraction_p(sys_, w, p, sampling)
    if condition == "esn-product":
        return certify_esn_product(sys_, w)
    if condition == "linear-series":
        if sys_.family != "linear":
            raise Unsupported(f"the linear series condition needs a linear system, got {sys_.family}")
        return certify_linear_series(sys_.A, w, terms, c=sys_.c)
    if condition == "sas-series":
        return certify_sas_series(sys_, w, terms, sampling=sampling)
    if condition == "compact":
        return compact_target_esp(sys_, w, sampling)
    if input_bound is None:
        raise InvalidInput("the bounded-inputs condition needs --input-bound")
    return certify_bounded_inputs(sys_, input_bound, sampling)


# ============ COMMANDS ============

system_option = click.option("--system", "system_path", required=True, type=click.Path(dir_okay=False),
                             help="System description JSON")
weighting_option = click.option("--weighting", default=DEFAULT_WEIGHTING, show_default=True,
                                help="Weighting sequence as JSON or a path to a JSON file")
output_option = click.option("--output", type=click.Path(dir_okay=False), default=None,
                             help="Result file; the extension picks csv, json, xlsx or pdf")


@click.group()
@click.version_option(__version__, prog_name="esplab")
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
              help="Run config JSON (defaults are written there if it does not exist)")
@click.option("--seed", type=int, default=None, help="Seed for every random draw")
@click.option("--verbose", is_flag=True, help="Debug logging on stderr")
@click.pass_context
def cli(ctx, config_file, seed, verbose):
    """Echo state and fading memory certificates, filter evaluation and Volterra kernels."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    config = load_config(config_file) if config_file else dict(DEFAULT_CONFIG)
    ctx.obj = merge_overrides(config, seed=seed)
    logger.debug("Run config: %s", ctx.obj)


@cli.command()
@system_option
@weighting_option
@click.option("--condition", type=click.Choice(CONDITIONS), default="contraction", show_default=True)
@click.option("--p", type=float, default=2.0, show_default=True, help="Exponent for contraction-p")
@click.option("--input-bound", type=float, default=None, help="Input ball radius M for bounded-inputs")
@click.option("--terms", type=int, default=200, show_default=True, help="Series terms")
@click.option("--require-certified", is_flag=True, help="Exit with 2 unless the verdict is certified")
@output_option
@click.pass_obj
def certify(config, system_path, weighting, condition, p, input_bound, terms, require_certified, output):
    """Certify the echo state and fading memory properties."""
    sys_ = load_system(system_path)
    w = parse_weighting(weighting)
    cert = _certificate(sys_, w, condition, config, p, input_bound, terms)
    print_certificate(cert)
    if output and not output.endswith(".json"):
        rows = [[k, v] for k, v in cert.to_dict().items() if not isinstance(v, (dict, list))]
        _write(output, "Certificate", ["field", "value"], rows, cert.details)
    else:
        _write_json(output, cert.to_dict())
    if require_certified and cert.verdict != Verdict.CERTIFIED:
        return 2
    return 0


@cli.command(name="eval")
@system_option
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False), help="Input window CSV")
@weighting_option
@click.option("--mode", type=click.Choice(["picard", "forward_washout"]), default=None)
@click.option("--tol", type=float, default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--window-depth", type=int, default=None,
              help="Window depth T: longer inputs keep their T most recent entries, shorter ones are zero-padded")
@click.option("--x-init", default=None, help="Initial state, comma separated")
@output_option
@click.pass_obj
def eval_command(config, system_path, input_path, weighting, mode, tol, max_iter, window_depth, x_init, output):
    """Evaluate the reservoir filter on an input window."""
    config = merge_overrides(config, mode=mode, tol=tol, max_iter=max_iter, T=window_depth)
    sys_ = load_system(system_path)
    z = Window.from_csv(input_path)
    shown = min(z.depth, config["T"])
    if z.depth != config["T"]:
        logger.info("Input depth %d fitted to T = %d", z.depth, config["T"])
    result = eval_filter(sys_, z.fit_depth(config["T"]), parse_weighting(weighting),
                         _mode(config, _parse_vector(x_init)))
    summary = {"mode": result.mode.value, "iterations": result.iterations, "residual": result.residual,
               "truncation_error_bound": result.truncation_error_bound, "T": config["T"]}
    _table(summary.items())
    header, rows = result.rows()
    rows = rows[-shown:]
    if output:
        _write(output, "Filter evaluation", header, rows, summary)
    else:
        click.echo(",".join(header))
        for row in rows:
            click.echo(",".join(repr(float(v)) for v in row))
    return 0


@cli.command(name="derivative-check")
@system_option
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False))
@click.option("--direction", "direction_path", type=click.Path(dir_okay=False), default=None,
              help="Direction window CSV (random when omitted)")
@weighting_option
@click.option("--eps", type=float, default=1e-5, show_default=True)
@click.option("--depth", type=int, default=None, help="Also check functional partials down to this lag")
@output_option
@click.pass_obj
def derivative_check(config, system_path, input_path, direction_path, weighting, eps, depth, output):
    """Compare the derivative recursion against central differences."""
    sys_ = load_system(system_path)
    w = parse_weighting(weighting)
    z = Window.from_csv(input_path)
    if direction_path:
        u = Window.from_csv(direction_path)
    else:
        u = Window(np.random.default_rng(config["seed"]).standard_normal(z.values.shape))
    mode = _mode(config)
    result = eval_filter(sys_, z, w, mode)
    v = directional_derivative(sys_, result, z, u)
    plus = eval_filter(sys_, z + u * eps, w, mode).states
    minus = eval_filter(sys_, z - u * eps, w, mode).states
    fd = (plus - minus) * (1 / (2 * eps))
    spec = NormSpec.weighted(w)
    error = norm(v - fd, spec) / max(norm(fd, spec), np.finfo(float).tiny)
    summary = {"relative_error_w": error}

    if depth is not None:
        partials = functional_partials(sys_, result, z, depth)
        cert = certify_contraction(sys_, w, _sampling(config))
        if cert.certified:
            bound = differential_forgetting_bound(sys_, w, depth, cert)
            summary["partial_bound_violations"] = int(np.sum(partials > bound[:, None] * (1 + 1e-9)))
        summary["max_partial"] = float(partials.max())
    _table(summary.items())

    header = ["t"] + [f"v{i}" for i in range(v.dim)] + [f"fd{i}" for i in range(v.dim)]
    rows = [[row - z.depth + 1] + list(v.values[row]) + list(fd.values[row]) for row in range(z.depth)]
    _write(output, "Derivative check", header, rows, summary)
    return 0


@cli.command()
@system_option
@weighting_option
@click.option("--kind", type=click.Choice(["input", "state"]), default="input", show_default=True)
@click.option("--past-u", type=click.Path(dir_okay=False), help="First past window CSV (input kind)")
@click.option("--past-v", type=click.Path(dir_okay=False), help="Second past window CSV (input kind)")
@click.option("--future", type=click.Path(dir_okay=False), help="Common future CSV (input kind)")
@click.option("--input", "input_path", type=click.Path(dir_okay=False), help="Input CSV (state kind)")
@click.option("--x0", default=None, help="First initial state (state kind)")
@click.option("--xbar0", default=None, help="Second initial state (state kind)")
@click.option("--no-envelope", is_flag=True, help="Report gaps only")
@output_option
@click.pass_obj
def forgetting(config, system_path, weighting, kind, past_u, past_v, future, input_path, x0, xbar0,
               no_envelope, output):
    """Input or state forgetting gaps against their certified envelopes."""
    sys_ = load_system(system_path)
    w = parse_weighting(weighting)
    if kind == "input":
        if not (past_u and past_v and future):
            raise InvalidInput("input forgetting needs --past-u, --past-v and --future")
        report = input_forgetting_experiment(sys_, Window.from_csv(past_u), Window.from_csv(past_v),
                                             Window.from_csv(future), w, with_envelope=not no_envelope)
    else:
        if not (input_path and x0 and xbar0):
            raise InvalidInput("state forgetting needs --input, --x0 and --xbar0")
        report = state_forgetting_experiment(sys_, Window.from_csv(input_path),
                                             _parse_vector(x0), _parse_vector(xbar0))
    summary = {"kind": report.kind, "violations": report.violations, "max_gap": float(report.gaps.max())}
    _table(summary.items())
    header, rows = report.rows()
    _write(output, f"{kind.title()} forgetting", header, rows, summary)
    return 0


@cli.command(name="volterra-extract")
@system_option
@click.option("--exact", is_flag=True, help="Exact kernels of a nilpotent linear system with polynomial readout")
@click.option("--order", type=int, default=None, help="Kernel order J (finite differences)")
@click.option("--memory", type=int, default=None, help="Kernel memory M_mem (finite differences)")
@click.option("--base", type=float, default=0.0, show_default=True, help="Constant base input z0")
@click.option("--step", type=float, default=None, help="Finite-difference step")
@output_option
@click.pass_obj
def volterra_extract(config, system_path, exact, order, memory, base, step, output):
    """Extract Volterra kernels and write them as JSON."""
    sys_ = load_system(system_path)
    if exact:
        if sys_.family != "linear" or sys_.readout is None:
            raise InvalidInput("exact extraction needs a linear system with a polynomial readout")
        kernels = extract_exact(sys_.A, sys_.c, sys_.readout)
    else:
        order = order or config["fd_order"]
        memory = config["memory"] if memory is None else memory
        kernels = extract_fd(sys_, Window.constant(base, memory + 1), order, memory, step, depth=config["T"])
    _table([("order", kernels.order), ("memory", kernels.memory),
            ("provenance", kernels.provenance.value), ("symmetry_spread", kernels.symmetry_spread)])
    _write_json(output, kernels.to_dict())
    return 0


@cli.command(name="volterra-eval")
@click.option("--kernels", "kernels_path", required=True, type=click.Path(dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False))
@output_option
def volterra_eval(kernels_path, input_path, output):
    """Evaluate a finite Volterra series along an input window."""
    kernels = VolterraKernelSet.from_dict(_read_json(kernels_path))
    z = Window.from_csv(input_path)
    values = eval_series_path(kernels, z)
    first = -(len(values) - 1)
    header = ["t"] + [f"y{i}" for i in range(kernels.output_dim)]
    rows = [[first + k] + list(row) for k, row in enumerate(values)]
    if output:
        _write(output, "Volterra series", header, rows, {"order": kernels.order, "memory": kernels.memory})
    else:
        click.echo(",".join(header))
        for row in rows:
            click.echo(",".join(repr(float(v)) for v in row))
    return 0


@cli.command(name="bound-check")
@system_option
@click.option("--kernels", "kernels_path", required=True, type=click.Path(dir_okay=False))
@weighting_option
@click.option("--trials", type=int, default=None)
@click.option("--ball-M", "ball_m", type=float, default=None, help="Domain ball radius M")
@click.option("--ball-L", "ball_l", type=float, default=None, help="Output bound L")
@click.option("--lags", type=int, default=None,
              help="Perturbed lags (default: kernel memory + 1); older lags also measure memory truncation")
@output_option
@click.pass_obj
def bound_check(config, system_path, kernels_path, weighting, trials, ball_m, ball_l, lags, output):
    """Measure Volterra truncation errors against the certified bound."""
    config = merge_overrides(config, trials=trials, ball_M=ball_m, ball_L=ball_l)
    sys_ = load_system(system_path)
    kernels = VolterraKernelSet.from_dict(_read_json(kernels_path))
    report = bound_check_experiment(sys_, kernels, parse_weighting(weighting), config["trials"],
                                    (config["ball_M"], config["ball_L"]), seed=config["seed"], lags=lags,
                                    depth=config["T"])
    summary = report.to_dict()
    _table(summary.items())
    header, rows = report.rows()
    _write(output, "Volterra bound check", header, rows, summary)
    return 0


def sweep_point(task):
    """Certificate values for one grid point; runs in worker processes"""
    system_data, weighting_data, scale, lam = task
    data = dict(system_data)
    data["A"] = (np.asarray(data["A"], dtype=float) * scale).tolist()
    w_data = dict(weighting_data)
    if lam is not None:
        w_data["lambda"] = lam
    cert = certify_contraction(system_from_dict(data), WeightingSequence.from_dict(w_data))
    return [
        [scale, lam, "lhs_value", cert.lhs_value],
        [scale, lam, "verdict", cert.verdict.value],
        [scale, lam, "filter_lipschitz", cert.filter_lipschitz],
    ]


@cli.command()
@system_option
@weighting_option
@click.option("--scales", default=None, help="Comma-separated factors applied to A")
@click.option("--lambdas", default=None, help="Comma-separated geometric weighting parameters")
@click.option("--workers", type=int, default=None, help="Worker processes")
@output_option
@click.pass_obj
def sweep(config, system_path, weighting, scales, lambdas, workers, output):
    """Certify over a grid of A scalings and geometric weighting parameters."""
    config = merge_overrides(config, workers=workers)
    system_data = load_system(system_path).to_dict()
    if "A" not in system_data:
        raise Unsupported(f"sweeps scale the matrix A, which the {system_data['family']} family lacks")
    w = parse_weighting(weighting)
    lam_grid = [None]
    if lambdas is not None:
        if w.kind != WeightKind.GEOMETRIC:
            raise InvalidInput("--lambdas needs a geometric weighting")
        lam_grid = _parse_grid(lambdas)
    tasks = [(system_data, w.to_dict(), scale, lam) for scale in _parse_grid(scales) for lam in lam_grid]

    if config["workers"] > 1:
        with ProcessPoolExecutor(max_workers=config["workers"]) as pool:
            results = list(pool.map(sweep_point, tasks))
    else:
        results = [sweep_point(task) for task in tasks]
    rows = [row for block in results for row in block]
    summary = {"grid_points": len(tasks),
               "certified": sum(1 for block in results if block[1][3] == Verdict.CERTIFIED.value)}
    _table(summary.items())
    header = ["scale", "lambda", "quantity", "value"]
    if output:
        _write(output, "Certificate sweep", header, rows, summary)
    else:
        click.echo(",".join(header))
        for row in rows:
            click.echo(",".join("" if v is None else _format(v) for v in row))
    return 0


def main(argv=None):
    """Run the CLI and return its exit code"""
    try:
        code = cli.main(args=argv, prog_name="esplab", standalone_mode=False)
    except click.exceptions.ClickException as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        click.echo("Aborted", err=True)
        return 1
    except EsplabError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    return code if isinstance(code, int) else 0
