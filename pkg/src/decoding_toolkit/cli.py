"""Experiment command line: seeded, deterministic runs emitting CSV.

Subcommands mirror the experiment families: ``theory`` (closed-form curves),
``sweep`` (observed rate vs parameter), ``repetition`` (n-gram repetition vs
rate), ``trap`` (long-horizon windowed traces), ``estimate`` (exponent fit),
``compress`` (arithmetic-coding demo), and ``generate`` (one decoded run).

Rate semantics: repetition always reports the surprise rate under the
untruncated model.  For sweep, trap, and generate, feedback-controlled
policies report the surprise the controller observed (its control target),
while fixed policies report the model surprise rate.

Exit codes: 0 success, 2 configuration error, 3 model I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coder import encode, decode, write_codestream
from .estimator import estimate_zipf_exponent
from .metrics import (
    csv_lines,
    ngram_repetition,
    perplexity,
    surprise_rate,
    trace_rows,
    trailing_window_means,
)
from .mirostat import (
    FixedPolicy,
    MirostatState,
    POLICY_PURE,
    POLICY_TOP_K,
    POLICY_TOP_P,
    controlled_per_step_surprises,
    controlled_surprise_rate,
    generate as run_generate,
)
from .models import (
    EndOfStream,
    ReplayFormatError,
    ReplayPrefixError,
    StdioModelClient,
    StdioProtocolError,
    ZipfSource,
    load_token_text,
    open_replay,
    teacher_forced_surprises,
    train_ngram,
)
from .zipf import (
    S_APPROX_MAX,
    ZipfParams,
    topk_cross_entropy_approx,
    topk_cross_entropy_exact,
    topp_cross_entropy_approx,
    topp_cross_entropy_exact,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MODEL = 3

REPETITION_ORDERS = (1, 2, 4, 6)

_MODEL_ERRORS = (
    ReplayFormatError,
    ReplayPrefixError,
    StdioProtocolError,
    EndOfStream,
    OSError,
)


class ConfigError(Exception):
    pass


class _PolicySpec:
    """Parsed --policy string: one base family plus optional modifiers."""

    CONTROLLERS = {"miro": "v1", "miro2": "v2", "miroavg": "avg"}

    def __init__(self, family: str, value: float | None, temperature: float, penalty: float):
        self.family = family
        self.value = value
        self.temperature = temperature
        self.penalty = penalty

    @property
    def is_controller(self) -> bool:
        return self.family in self.CONTROLLERS

    @property
    def variant(self) -> str:
        return self.CONTROLLERS[self.family]

    @classmethod
    def parse(cls, text: str) -> "_PolicySpec":
        family = None
        value = None
        temperature = 1.0
        penalty = 1.0
        saw_modifier = False
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            name, sep, raw = part.partition(":")
            if not sep:
                raise ConfigError(f"policy term {part!r} must look like name:value")
            try:
                num = float(raw)
            except ValueError:
                raise ConfigError(f"policy value {raw!r} is not a number") from None
            if name in ("top_k", "top_p", "miro", "miro2", "miroavg"):
                if family is not None:
                    raise ConfigError("policy may contain only one base family")
                family, value = name, num
            elif name == "temp":
                temperature = num
                saw_modifier = True
            elif name == "penalty":
                penalty = num
                saw_modifier = True
            else:
                raise ConfigError(f"unknown policy term {name!r}")
        if family is None:
            # temp/penalty alone mean pure sampling under that distortion.
            if not saw_modifier:
                raise ConfigError("policy must name a base family, temp, or penalty")
            family = "temp"
            value = temperature
        if temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {temperature}")
        if penalty < 1.0:
            raise ConfigError(f"penalty must be >= 1, got {penalty}")
        return cls(family, value, temperature, penalty)

    def bind(self, param: float, grid_key: str, eta: float, m: int):
        """Instantiate (policy_object, temperature, penalty) at one grid point."""
        value = self.value
        temperature = self.temperature
        penalty = self.penalty
        if grid_key == "penalty":
            penalty = param
            if penalty < 1.0:
                raise ConfigError(f"penalty grid values must be >= 1, got {penalty}")
        elif self.family == "temp":
            temperature = param
            if temperature <= 0:
                raise ConfigError(f"temperature grid values must be > 0, got {param}")
        else:
            value = param
        if self.family == "top_k":
            if value is None or value < 1 or value != int(value):
                raise ConfigError(f"top_k needs a positive integer k, got {value}")
            return FixedPolicy(POLICY_TOP_K, int(value)), temperature, penalty
        if self.family == "top_p":
            if value is None or not 0 < value <= 1:
                raise ConfigError(f"top_p needs p in (0, 1], got {value}")
            return FixedPolicy(POLICY_TOP_P, float(value)), temperature, penalty
        if self.family == "temp":
            return FixedPolicy(POLICY_PURE), temperature, penalty
        if value is None or value <= 0:
            raise ConfigError(f"{self.family} needs a target surprise > 0, got {value}")
        tau = float(value)
        if self.family == "miro":
            return MirostatState.v1(tau, eta=eta, m=m), temperature, penalty
        if self.family == "miro2":
            return MirostatState.v2(tau, eta=eta), temperature, penalty
        return MirostatState.avg(tau, eta=eta), temperature, penalty


def _build_model(spec: str, args):
    kind, _, rest = spec.partition(":")
    if kind == "zipf":
        params = ZipfParams(s=args.s, n_vocab=args.n_vocab)
        return ZipfSource(params)
    if kind == "ngram":
        if not rest:
            raise ConfigError("ngram model needs a corpus path: ngram:PATH")
        ids, _ = load_token_text(rest)
        return train_ngram(ids, order=args.order)
    if kind == "replay":
        if not rest:
            raise ConfigError("replay model needs a file path: replay:PATH")
        return open_replay(rest)
    if kind == "stdio":
        if not rest:
            raise ConfigError("stdio model needs a command: stdio:CMD ...")
        return StdioModelClient(rest, timeout=args.timeout)
    raise ConfigError(f"unknown model kind {kind!r}")


def _close_model(model) -> None:
    if isinstance(model, StdioModelClient):
        model.close()


def _cell_rng(seed: int, param_index: int, run_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(param_index, run_index))
    return np.random.default_rng(seq)


def _parse_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"grid {text!r} must be comma-separated numbers") from None
    if not values:
        raise ConfigError("grid is empty")
    return values


def _fmt_param(value: float) -> object:
    return int(value) if value == int(value) else value


def _write_output(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _meta(args, command: str, **extra) -> dict:
    meta = {"toolkit_version": __version__, "command": command}
    for key in ("model", "policy", "tokens", "runs", "seed", "grid", "grid_key"):
        if hasattr(args, key) and getattr(args, key) is not None:
            meta[key] = getattr(args, key)
    meta.update(extra)
    return meta


def _parse_context(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"context {text!r} must be integer token ids") from None


def _run_cell(model, spec: _PolicySpec, param, grid_key, args, rng):
    policy, temperature, penalty = spec.bind(param, grid_key, args.eta, args.m)
    return run_generate(
        model,
        policy,
        args.tokens,
        rng=rng,
        context=_parse_context(args.context),
        temperature=temperature,
        penalty_theta=penalty,
    )


def _record_rate(record, spec: _PolicySpec) -> float:
    if spec.is_controller:
        return controlled_surprise_rate(record, variant=spec.variant)
    return surprise_rate(record)


def cmd_theory(args) -> int:
    params = ZipfParams(s=args.s, n_vocab=args.n_vocab)
    if args.k_grid:
        k_grid = [int(v) for v in _parse_grid(args.k_grid)]
    else:
        k_grid = sorted(
            set(np.unique(np.rint(np.logspace(0, 4, 25))).astype(int).tolist())
        )
    k_grid = [k for k in k_grid if 1 <= k <= params.n_vocab]
    p_grid = (
        _parse_grid(args.p_grid)
        if args.p_grid
        else [round(0.1 * i, 1) for i in range(1, 10)]
    )
    approx_ok = 1.0 < params.s_eff <= S_APPROX_MAX + 1e-12
    rows = []
    for k in k_grid:
        exact = topk_cross_entropy_exact(k, params)
        approx = (
            topk_cross_entropy_approx(k, params) if approx_ok and k >= 2 else ""
        )
        rows.append(("k", _fmt_param(k), exact, approx))
    for p in p_grid:
        exact = topp_cross_entropy_exact(p, params)
        try:
            approx = topp_cross_entropy_approx(p, params) if approx_ok else ""
        except ValueError:
            approx = ""
        rows.append(("p", p, exact, approx))
    meta = _meta(args, "theory", s=args.s, n_vocab=args.n_vocab)
    _write_output(args, csv_lines(meta, ("kind", "param", "exact_bits", "approx_bits"), rows))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _PolicySpec.parse(args.policy)
    grid = _parse_grid(args.grid)
    model = _build_model(args.model, args)
    semantics = "controlled" if spec.is_controller else "model"
    rows = []
    try:
        for i, param in enumerate(grid):
            for run in range(args.runs):
                record = _run_cell(
                    model, spec, param, args.grid_key, args, _cell_rng(args.seed, i, run)
                )
                rate = _record_rate(record, spec)
                rows.append((_fmt_param(param), run, rate, perplexity(rate)))
    finally:
        _close_model(model)
    meta = _meta(args, "sweep", rate_semantics=semantics)
    _write_output(
        args,
        csv_lines(meta, ("param", "run", "surprise_rate_bits", "perplexity"), rows),
    )
    return EXIT_OK


def cmd_repetition(args) -> int:
    spec = _PolicySpec.parse(args.policy)
    grid = _parse_grid(args.grid)
    model = _build_model(args.model, args)
    if args.model.startswith("zipf"):
        print(
            "warning: the stationary zipf source has no context dependence; "
            "repetition dynamics will be trivial",
            file=sys.stderr,
        )
    rows = []
    try:
        for i, param in enumerate(grid):
            for run in range(args.runs):
                record = _run_cell(
                    model, spec, param, args.grid_key, args, _cell_rng(args.seed, i, run)
                )
                rate = surprise_rate(record)
                tokens = record.generated_tokens
                for n in REPETITION_ORDERS:
                    percent = ngram_repetition(tokens, n).percent
                    rows.append((_fmt_param(param), run, rate, n, percent))
    finally:
        _close_model(model)
    meta = _meta(args, "repetition", rate_semantics="model")
    _write_output(
        args,
        csv_lines(
            meta,
            ("param", "run", "surprise_rate_bits", "n", "percent_repetition"),
            rows,
        ),
    )
    return EXIT_OK


def cmd_trap(args) -> int:
    spec = _PolicySpec.parse(args.policy)
    model = _build_model(args.model, args)
    semantics = "controlled" if spec.is_controller else "model"
    traces = []
    try:
        for run in range(args.runs):
            record = _run_cell(
                model, spec, spec.value, "param", args, _cell_rng(args.seed, 0, run)
            )
            if spec.is_controller:
                series = controlled_per_step_surprises(record, spec.variant)
            else:
                series = record.generated_surprises
            traces.append(trailing_window_means(series, width=args.window))
    finally:
        _close_model(model)
    n_steps = min(len(t) for t in traces)
    stacked = np.stack([t[:n_steps] for t in traces])
    means = stacked.mean(axis=0)
    rows = [(i + 1, float(m)) for i, m in enumerate(means)]
    meta = _meta(args, "trap", rate_semantics=semantics, window=args.window)
    _write_output(args, csv_lines(meta, ("step", "mean_window_surprise_bits"), rows))
    return EXIT_OK


def cmd_estimate(args) -> int:
    if (args.probs_file is None) == (args.replay is None):
        raise ConfigError("estimate needs exactly one of --probs-file or --replay")
    if args.probs_file:
        text = (
            sys.stdin.read()
            if args.probs_file == "-"
            else Path(args.probs_file).read_text(encoding="utf-8")
        )
        try:
            probs = [float(line) for line in text.split() if line.strip()]
        except ValueError:
            raise ConfigError("probability list must contain only numbers") from None
        probs = sorted(probs, reverse=True)
    else:
        source = open_replay(args.replay)
        if not 0 <= args.step < source.n_steps:
            raise ConfigError(
                f"step {args.step} outside replay of {source.n_steps} steps"
            )
        probs = source.distribution_at(args.step).probs
    est = estimate_zipf_exponent(probs, m=args.m)
    print(f"s_hat={est.s_hat!r} epsilon_hat={est.epsilon_hat!r} m_used={est.m_used}")
    return EXIT_OK


def cmd_compress(args) -> int:
    model = _build_model(args.model, args)
    try:
        if args.tokens_file:
            try:
                tokens = [
                    int(t) for t in Path(args.tokens_file).read_text().split()
                ]
            except ValueError:
                raise ConfigError("token file must contain integer ids") from None
            surprises = teacher_forced_surprises(model, tokens)
        elif args.policy:
            spec = _PolicySpec.parse(args.policy)
            record = _run_cell(
                model, spec, spec.value, "param", args, _cell_rng(args.seed, 0, 0)
            )
            tokens = record.generated_tokens
            surprises = record.generated_surprises
        else:
            raise ConfigError("compress needs --tokens-file or --policy")
        stream = encode(tokens, model)
        rate = float(np.mean(surprises)) if surprises else 0.0
        if args.out:
            write_codestream(args.out, stream, model.n_vocab)
        if args.check_roundtrip:
            if decode(stream, model, stream.n_tokens) != tokens:
                print("roundtrip=FAIL")
                return EXIT_MODEL
            print("roundtrip=ok")
        print(
            f"n_tokens={stream.n_tokens} bits={stream.n_bits} "
            f"bits_per_token={stream.bits_per_token!r} surprise_rate_bits={rate!r}"
        )
    finally:
        _close_model(model)
    return EXIT_OK


def cmd_generate(args) -> int:
    model = _build_model(args.model, args)
    try:
        if args.model.startswith("replay:"):
            # A replay is prefix-bound: the only well-defined run is the
            # recorded one, so generate replays it teacher-forced.
            tokens = model.recorded_tokens
            surprises = model.recorded_surprises_bits()
            semantics = "model"
            policy_label = "replay"
        else:
            if not args.policy:
                raise ConfigError("generate needs --policy for non-replay models")
            spec = _PolicySpec.parse(args.policy)
            record = _run_cell(
                model, spec, spec.value, "param", args, _cell_rng(args.seed, 0, 0)
            )
            tokens = record.generated_tokens
            if spec.is_controller:
                surprises = controlled_per_step_surprises(record, spec.variant)
                semantics = "controlled"
            else:
                surprises = record.generated_surprises
                semantics = "model"
            policy_label = args.policy
    finally:
        _close_model(model)
    rows = [
        (step, token, s, m)
        for (step, s, m), token in zip(trace_rows(surprises, args.window), tokens)
    ]
    meta = _meta(args, "generate", rate_semantics=semantics, window=args.window)
    meta["policy"] = policy_label
    _write_output(
        args,
        csv_lines(
            meta, ("step", "token_id", "surprise_bits", "window_mean_bits"), rows
        ),
    )
    return EXIT_OK


def _add_model_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model", help="zipf | ngram:PATH | replay:PATH | stdio:CMD")
    sub.add_argument("--s", type=float, help="zipf exponent (default 1.1)")
    sub.add_argument("--n-vocab", type=int, help="zipf vocabulary size (default 50000)")
    sub.add_argument("--order", type=int, help="ngram order (default 3)")
    sub.add_argument("--timeout", type=float, help="stdio step timeout seconds (default 60)")


def _add_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--policy", help="e.g. top_k:40 | top_p:0.9 | temp:1.2 | miro:3; modifiers temp:T, penalty:THETA")
    sub.add_argument("--tokens", type=int, help="tokens to generate per run")
    sub.add_argument("--runs", type=int, help="runs per grid point")
    sub.add_argument("--seed", type=int, help="base seed (default 0)")
    sub.add_argument("--context", help="comma-separated context token ids")
    sub.add_argument("--eta", type=float, help="controller learning rate (default 1.0)")
    sub.add_argument("--m", type=int, help="estimator width for miro (default 100)")


_DEFAULTS = {
    "s": 1.1,
    "n_vocab": 50000,
    "order": 3,
    "timeout": 60.0,
    "tokens": 200,
    "runs": 4,
    "seed": 0,
    "eta": 1.0,
    "m": 100,
    "window": 10,
    "step": 0,
    "grid_key": "param",
    "context": None,
}

_COMMAND_DEFAULTS = {
    "trap": {"tokens": 900, "runs": 10},
    "compress": {"tokens": 1000, "runs": 1},
    "generate": {"runs": 1},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toolkit",
        description="Decoding-control experiments with deterministic CSV output.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    def new(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key=value file supplying defaults")
        sub.add_argument("--out", help="output CSV path (default stdout)")
        return sub

    sub = new("theory", "closed-form top-k and top-p cross-entropy curves")
    sub.add_argument("--s", type=float)
    sub.add_argument("--n-vocab", type=int)
    sub.add_argument("--k-grid", help="comma-separated k values")
    sub.add_argument("--p-grid", help="comma-separated p values")

    sub = new("sweep", "observed surprise rate across a parameter grid")
    _add_model_options(sub)
    _add_run_options(sub)
    sub.add_argument("--grid", help="comma-separated parameter values")
    sub.add_argument("--grid-key", choices=("param", "penalty"))

    sub = new("repetition", "n-gram repetition vs observed surprise rate")
    _add_model_options(sub)
    _add_run_options(sub)
    sub.add_argument("--grid", help="comma-separated parameter values")
    sub.add_argument("--grid-key", choices=("param", "penalty"))

    sub = new("trap", "long-horizon windowed surprise trace, averaged over runs")
    _add_model_options(sub)
    _add_run_options(sub)
    sub.add_argument("--window", type=int, help="trailing window width (default 10)")

    sub = new("estimate", "fit the Zipf exponent from probabilities")
    sub.add_argument("--probs-file", help="newline-separated probabilities, '-' for stdin")
    sub.add_argument("--replay", help="replay file to read a step from")
    sub.add_argument("--step", type=int, help="replay step index (default 0)")
    sub.add_argument("--m", type=int, help="number of top probabilities to use")

    sub = new("compress", "arithmetic-code tokens under a model")
    _add_model_options(sub)
    _add_run_options(sub)
    sub.add_argument("--tokens-file", help="whitespace-separated token ids to encode")
    sub.add_argument("--check-roundtrip", action="store_true", default=None)

    sub = new("generate", "one decoded run (teacher-forced for replay models)")
    _add_model_options(sub)
    _add_run_options(sub)
    sub.add_argument("--window", type=int, help="trailing window width (default 10)")

    return parser


def _load_config(path: str) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    argv: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key = key.strip().replace("_", "-")
        flag = f"--{key}"
        value = value.strip()
        if value.lower() in ("true", "yes") and key == "check-roundtrip":
            argv.append(flag)
        else:
            argv.extend([flag, value])
    return argv


def _apply_defaults(args: argparse.Namespace) -> None:
    merged = dict(_DEFAULTS)
    merged.update(_COMMAND_DEFAULTS.get(args.command, {}))
    for key, value in merged.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)


_COMMANDS = {
    "theory": cmd_theory,
    "sweep": cmd_sweep,
    "repetition": cmd_repetition,
    "trap": cmd_trap,
    "estimate": cmd_estimate,
    "compress": cmd_compress,
    "generate": cmd_generate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            config_argv = _load_config(args.config)
            # Re-parse with config-supplied flags first so explicit CLI
            # flags (parsed later) win.
            args = parser.parse_args([args.command] + config_argv + argv[1:])
        _apply_defaults(args)
        _validate_common(args)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


def _validate_common(args: argparse.Namespace) -> None:
    if args.command in ("sweep", "repetition"):
        if not args.model:
            raise ConfigError(f"{args.command} needs --model")
        if not args.policy:
            raise ConfigError(f"{args.command} needs --policy")
        if not args.grid:
            raise ConfigError(f"{args.command} needs --grid")
    if args.command == "trap" and (not args.model or not args.policy):
        raise ConfigError("trap needs --model and --policy")
    if args.command in ("compress", "generate") and not args.model:
        raise ConfigError(f"{args.command} needs --model")
    tokens = getattr(args, "tokens", None)
    if tokens is not None and tokens < 0:
        raise ConfigError(f"tokens must be >= 0, got {tokens}")
    runs = getattr(args, "runs", None)
    if runs is not None and runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")


if __name__ == "__main__":
    sys.exit(main())
