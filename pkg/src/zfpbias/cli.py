"""Command-line interface.

Exit codes: 0 success, 2 unparseable arguments or input files,
3 invalid configuration, 4 runtime failure.  Errors are written to stderr
as a single JSON object; results go to stdout.
"""
from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bias, codec, harness
from .codec import CodecConfig, Rounding
from .errors import ConfigError, ContainerError, NonFiniteInput

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4

GRID_MAGIC = b"ZRAW"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sBBB3Q")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"f32": 0, "f64": 1}
_PRECISION = {"f32": (24, 30), "f64": (53, 62)}


class ParseError(Exception):
    pass


@dataclass
class RawGrid:
    data: np.ndarray
    dtype: str  # "f32" or "f64"

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape


def grid_bytes(grid: RawGrid) -> bytes:
    data = np.asarray(grid.data)
    if not 1 <= data.ndim <= 3:
        raise ConfigError("grids have 1 to 3 dimensions")
    dims = list(data.shape) + [1] * (3 - data.ndim)
    code = _DTYPE_CODES[grid.dtype]
    header = _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, code, data.ndim, *dims)
    return header + np.ascontiguousarray(data, dtype=_DTYPES[code]).tobytes()


def write_grid(path, grid: RawGrid) -> None:
    Path(path).write_bytes(grid_bytes(grid))


def parse_grid(raw: bytes, dims=None, dtype=None) -> RawGrid:
    """Parse a grid file; headerless input needs ``dims`` and ``dtype``."""
    if raw[:4] == GRID_MAGIC:
        if len(raw) < _GRID_HEADER.size:
            raise ParseError("truncated grid header")
        _, version, code, ndims, *all_dims = _GRID_HEADER.unpack_from(raw)
        if version != GRID_VERSION:
            raise ParseError(f"unsupported grid version {version}")
        if code not in _DTYPES or not 1 <= ndims <= 3:
            raise ParseError("bad grid header")
        shape = tuple(int(n) for n in all_dims[:ndims])
        body = raw[_GRID_HEADER.size:]
        name = "f32" if code == 0 else "f64"
    else:
        if dims is None or dtype is None:
            raise ParseError("input has no grid header; pass --dims and --dtype")
        shape, name, body = tuple(dims), dtype, raw
    dt = _DTYPES[_DTYPE_CODES[name]]
    count = int(np.prod(shape))
    if count == 0 or len(body) != count * dt.itemsize:
        raise ParseError("sample count does not match dims")
    data = np.frombuffer(body, dtype=dt).reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise ParseError("grid contains NaN or infinity")
    return RawGrid(data, name)


def read_grid(path, dims=None, dtype=None) -> RawGrid:
    return parse_grid(Path(path).read_bytes(), dims, dtype)


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(message)


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}") from None
    if not dims or len(dims) > 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError("dims must be 1 to 3 positive extents")
    return dims


def _beta_range(text: str) -> list[int]:
    try:
        lo, hi = (int(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("beta range must look like LO:HI") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("empty beta range")
    return list(range(lo, hi + 1))


def _cfg_dict(cfg: CodecConfig) -> dict:
    return {"d": cfg.d, "k": cfg.k, "q": cfg.q, "beta": cfg.beta,
            "rounding": cfg.rounding.value}


def cmd_compress(args) -> dict:
    grid = read_grid(args.input, args.dims, args.dtype)
    k, q = _PRECISION[grid.dtype]
    d = args.d or grid.data.ndim
    cfg = CodecConfig(d=d, beta=args.precision, k=k, q=q, rounding=args.mode)
    stream, shape = codec.compress_array(grid.data, cfg)
    nbytes = codec.write_container(args.output, stream, shape)
    return {"config": _cfg_dict(cfg), "dims": list(shape), "bytes": nbytes,
            "bits_per_value": 8 * nbytes / grid.data.size}


def cmd_decompress(args) -> dict:
    stream, shape = codec.read_container(args.input)
    data = codec.decompress_array(stream, shape)
    dtype = "f32" if stream.cfg.k <= 24 else "f64"
    write_grid(args.output, RawGrid(data, dtype))
    return {"config": _cfg_dict(stream.cfg), "dims": list(shape), "dtype": dtype}


def cmd_predict(args) -> dict:
    cfg = CodecConfig(d=args.d, beta=args.beta, k=args.k, q=args.q, rounding=args.mode)
    pred = bias.predict_total_bias(cfg, args.emax, warn=False)
    return pred.to_dict()


def cmd_simulate(args):
    cfg = CodecConfig(d=args.d, k=args.k, q=args.q, rounding=args.mode)
    source = harness.SyntheticBlocks(d=args.d, e_min=args.emin, rho=args.rho, k=args.k)
    report = harness.run_bias_experiment(source, cfg, args.beta_range, args.trials,
                                         args.seed, threads=args.threads)
    return report.to_csv() if args.format == "csv" else report.to_json()


def cmd_distribution(args) -> dict:
    rep = harness.run_distribution_experiment(args.trials, args.seed, rounding=args.mode,
                                              tolerance=args.tolerance, e_max=args.emax,
                                              bins=args.bins, threads=args.threads)
    out = rep.to_dict()
    out.update({"seed": args.seed, "rounding": Rounding(args.mode).value,
                "tolerance": args.tolerance, "e_max": args.emax})
    return out


def cmd_autocorr(args) -> dict:
    first = read_grid(args.inputs[0]).data
    if len(args.inputs) == 2:
        other = read_grid(args.inputs[1]).data
        if other.shape != first.shape:
            raise ConfigError("grids differ in shape")
        field_values = other - first
    else:
        field_values = first
    r = harness.autocorrelation(field_values)
    centre = harness.zero_lag_index(r.shape)
    out = {"shape": list(r.shape), "center": float(r[centre]), "norm": float(np.linalg.norm(r))}
    if r.ndim > 1:
        out["time_slice_norm"] = float(np.linalg.norm(harness.time_slice(r)))
    if args.output:
        write_grid(args.output, RawGrid(r, "f64"))
    return out


def cmd_bitstats(args) -> dict:
    cfg = CodecConfig(d=args.d)
    source = harness.SyntheticBlocks(d=args.d, e_min=args.emin, rho=args.rho)
    stats = harness.run_bitstats(source, cfg, args.trials, args.seed, integers=args.integers)
    return {"config": _cfg_dict(cfg), "seed": args.seed, "trials": args.trials,
            "integers": args.integers, "rho": args.rho, "e_min": args.emin,
            "widths": stats.to_dict()}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zfpbias", description="Block codec with bias prediction tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    modes = [m.value for m in Rounding]

    c = sub.add_parser("compress", help="compress a grid file")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--precision", type=int, required=True, help="bit planes kept per block")
    c.add_argument("--mode", choices=modes, default="never")
    c.add_argument("--dims", type=_dims, help="extents for headerless input, e.g. 64,64")
    c.add_argument("--dtype", choices=sorted(_DTYPE_CODES), help="sample type for headerless input")
    c.add_argument("--d", type=int, help="block dimension (default: grid rank)")
    c.set_defaults(func=cmd_compress)

    c = sub.add_parser("decompress", help="decompress a container to a grid file")
    c.add_argument("input")
    c.add_argument("output")
    c.set_defaults(func=cmd_decompress)

    c = sub.add_parser("predict", help="predicted mean error for one block exponent")
    c.add_argument("--d", type=int, default=1)
    c.add_argument("--k", type=int, default=24)
    c.add_argument("--q", type=int, default=30)
    c.add_argument("--beta", type=int, required=True)
    c.add_argument("--emax", type=int, required=True)
    c.add_argument("--mode", choices=modes, default="never")
    c.set_defaults(func=cmd_predict)

    c = sub.add_parser("simulate", help="measured vs predicted mean error over a beta sweep")
    c.add_argument("--d", type=int, default=1)
    c.add_argument("--k", type=int, default=24)
    c.add_argument("--q", type=int, default=30)
    c.add_argument("--rho", type=int, default=0)
    c.add_argument("--emin", type=int, default=-20)
    c.add_argument("--beta-range", type=_beta_range, required=True)
    c.add_argument("--trials", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--mode", choices=modes, default="never")
    c.add_argument("--format", choices=["csv", "json"], default="csv")
    c.add_argument("--threads", type=int, default=1)
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("distribution", help="per-position error distribution in ulps")
    c.add_argument("--trials", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--mode", choices=modes, default="never")
    c.add_argument("--tolerance", type=float, default=2.0 ** -8)
    c.add_argument("--emax", type=int, default=8)
    c.add_argument("--bins", type=int, default=16)
    c.add_argument("--threads", type=int, default=1)
    c.set_defaults(func=cmd_distribution)

    c = sub.add_parser("autocorr", help="autocorrelation of a field or of B - A")
    c.add_argument("inputs", nargs="+", metavar="GRID")
    c.add_argument("--output", help="write the correlation field as a grid")
    c.set_defaults(func=cmd_autocorr)

    c = sub.add_parser("bitstats", help="one-bit frequencies of transform coefficients")
    c.add_argument("--d", type=int, default=1)
    c.add_argument("--rho", type=int, default=0)
    c.add_argument("--emin", type=int, default=-20)
    c.add_argument("--trials", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--integers", action="store_true", help="use uniform integer blocks")
    c.set_defaults(func=cmd_bitstats)
    return p


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "autocorr" and len(args.inputs) > 2:
            raise ParseError("autocorr takes one or two grids")
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be at least 1")
        result = args.func(args)
    except (ParseError, ContainerError, NonFiniteInput) as exc:
        return _fail(EXIT_PARSE, exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        return _fail(EXIT_RUNTIME, exc)
    if isinstance(result, str):
        sys.stdout.write(result if result.endswith("\n") else result + "\n")
    else:
        sys.stdout.write(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
