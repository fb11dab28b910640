"""Command-line interface.

Subcommands mirror the pipeline stages so a full run can be reproduced by
chaining them: simulate, calibrate, entropy, filter, autocorr, spectrum,
extract, test, run.  Exit codes: 0 success, 2 validation error, 3 stage
failure, 4 statistical-test failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import acquisition as acq
from . import dsp as dsp_mod
from . import extractor as ext
from .config import ConfigError, PipelineConfig
from .entropy import EntropyError, build_certificate
from .pipeline import (
    BitSink,
    Pipeline,
    StageError,
    _sidecar_text,
    extract_pair_stream,
    run_pipeline,
)
from .randtests import RandTestError, run_battery

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_TESTS = 4

_VALIDATION_ERRORS = (
    ConfigError,
    EntropyError,
    RandTestError,
    acq.AcquisitionError,
    dsp_mod.DspError,
    ext.ExtractorError,
    ValueError,
)


def _load_config(args) -> PipelineConfig:
    cfg = (
        PipelineConfig.from_file(args.config)
        if args.config
        else PipelineConfig()
    )
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return cfg.override(overrides)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="configuration file (section.key=value lines)")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a configuration key (repeatable)",
    )


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    pipe = Pipeline(cfg)
    out = args.out or cfg["out.samples"]
    kept, excluded = pipe.gated_block_indices()
    if not kept:
        raise StageError("simulate", "all blocks excluded by the LO monitor")
    total = 0
    clipped = 0
    acc = np.zeros((2, 2))  # per channel: sum, sum of squares
    with acq.Qrb1Writer(out, pipe.adc, pipe.lo_power) as writer:
        for i in kept:
            n = pipe.block_length(i)
            v1, v2 = pipe.simulate_voltages(i, n)
            for k, v in enumerate((v1, v2)):
                acc[k, 0] += v.sum()
                acc[k, 1] += (v**2).sum()
            c1, k1 = acq.quantize(v1, pipe.adc)
            c2, k2 = acq.quantize(v2, pipe.adc)
            clipped += k1 + k2
            total += n
            writer.append(c1, c2)
    var = [acc[k, 1] / total - (acc[k, 0] / total) ** 2 for k in (0, 1)]
    print(f"samples={total}")
    print(f"excluded_blocks={','.join(str(i) for i in excluded)}")
    print(f"clipped={clipped}")
    print(f"var_v1={var[0]!r}")
    print(f"var_v2={var[1]!r}")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    pipe = Pipeline(cfg)
    if args.powers:
        powers = [float(p) for p in args.powers.split(",") if p.strip()]
    else:
        powers = list(np.linspace(0.01e-3, 4.05e-3, 20))
    points = acq.run_calibration_sweep(
        pipe.cal, powers, args.samples_per_point, pipe.adc, int(cfg["sim.seed"])
    )
    fit = acq.fit_calibration(points)
    resid_lines = []
    for ch, pts in enumerate(points, start=1):
        m, q = fit.channel(ch)
        rel = max(
            abs(v - (m * p + q)) / (m * p + q) for p, v in pts
        )
        resid_lines.append(f"channel {ch}: max relative residual {rel:.3e}")
    out = args.out or cfg["out.calibration"]
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(fit.to_kv_text(residual_summary="\n".join(resid_lines)))
    print(f"m1={fit.slope_1!r} +- {fit.slope_err_1!r}")
    print(f"q1={fit.intercept_1!r} +- {fit.intercept_err_1!r}")
    print(f"m2={fit.slope_2!r} +- {fit.slope_err_2!r}")
    print(f"q2={fit.intercept_2!r} +- {fit.intercept_err_2!r}")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_entropy(args) -> int:
    cfg = _load_config(args)
    pipe = Pipeline(cfg)
    dq = args.delta_q if args.delta_q is not None else pipe.delta_q
    dp = args.delta_p if args.delta_p is not None else pipe.delta_p
    rate = args.rate if args.rate is not None else pipe.pair_rate
    cert = build_certificate(
        dq, dp, rate, pipe.epsilon, var_q=args.var_q, var_p=args.var_p
    )
    out = args.out or cfg["out.certificate"]
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(cert.to_kv_text())
    print(cert.to_kv_text(), end="")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_filter(args) -> int:
    cfg = _load_config(args)
    pipe = Pipeline(cfg)
    if not pipe.dsp_enabled:
        raise ConfigError("dsp.enabled is false; nothing to filter")
    src = args.infile or cfg["out.samples"]
    dst = args.out or cfg["out.filtered"]
    decs = pipe.make_decimators()
    d1, d2 = decs
    written = 0
    with acq.Qrb1Writer(dst, pipe.decimated_adc(), pipe.lo_power) as writer:

        def _write(outs1, outs2):
            nonlocal written
            for o1, o2 in zip(outs1, outs2):
                ci, _ = pipe.requantize(o1)
                cq, _ = pipe.requantize(o2)
                writer.append(ci, cq)
                written += ci.size

        for blk in acq.iter_qrb1_blocks(src, int(cfg["sim.block_samples"])):
            _write(d1.push(blk.codes_i.astype(d1._dtype)),
                   d2.push(blk.codes_q.astype(d2._dtype)))
        _write(d1.flush(), d2.flush())
    print(f"pairs={written}")
    print(f"new_rate={pipe.pair_rate!r}")
    print(f"wrote {dst}")
    return EXIT_OK


def _file_pair_blocks(path, block_pairs):
    for blk in acq.iter_qrb1_blocks(path, block_pairs):
        yield blk.codes_i, blk.codes_q


def _cmd_extract(args) -> int:
    cfg = _load_config(args)
    src = args.infile or cfg["out.filtered"]
    with open(src, "rb") as fh:
        adc, lo_power = acq._unpack_header(fh.read(acq.QRB1_HEADER.size))
    cal = cfg.calibration()
    s1, s2 = acq.phase_space_scales(cal, lo_power)
    from .entropy import quantum_bound_discrete

    hmin = quantum_bound_discrete(adc.lsb / s1, adc.lsb / s2)
    eps = cfg.epsilon()
    block_pairs = int(cfg["extractor.block_samples"])
    sink = BitSink()
    records = []
    for rec in extract_pair_stream(
        _file_pair_blocks(src, block_pairs), adc, lo_power, hmin, eps,
        block_pairs, int(cfg["extractor.seed"]),
        bool(cfg["extractor.fresh_seed_per_block"]),
    ):
        records.append(rec)
        sink.append(rec.output)
    if not records:
        raise StageError("extract", "input too short for one extraction block")
    cert = build_certificate(adc.lsb / s1, adc.lsb / s2, adc.sample_rate, eps)
    out_bits = args.out or cfg["out.bits"]
    out_meta = args.sidecar or cfg["out.sidecar"]
    with open(out_bits, "wb") as fh:
        fh.write(sink.tobytes())
    with open(out_meta, "w", encoding="utf-8") as fh:
        fh.write(_sidecar_text(records, cert, sink.n_bits))
    print(f"blocks={len(records)}")
    print(f"output_bits={sink.n_bits}")
    ratio = sink.n_bits / sum(r.n_input_bits for r in records)
    print(f"ratio={ratio!r}")
    print(f"wrote {out_bits}")
    return EXIT_OK


def _cmd_test(args) -> int:
    cfg = _load_config(args)
    src = args.infile or cfg["out.bits"]
    raw = np.fromfile(src, dtype=np.uint8)
    total_bits = 8 * raw.size
    n_bits = args.n_bits or total_bits
    if n_bits > total_bits:
        raise RandTestError(f"file holds {total_bits} bits, requested {n_bits}")
    bits = np.unpackbits(raw, count=total_bits)
    primary = bits[:n_bits]
    retest_pool = bits[n_bits:]
    retest = None
    if retest_pool.size >= n_bits:
        # static file: the tail serves as the fresh block for retests
        retest = lambda n: retest_pool[:n]
    alpha = args.alpha if args.alpha is not None else float(cfg["test.alpha"])
    battery = run_battery(primary, alpha, tests=cfg.enabled_tests(), retest_source=retest)
    print(battery.to_table_text(), end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(battery.to_kv_text())
    return EXIT_OK if battery.all_passed else EXIT_TESTS


def _read_channel(path, channel):
    block = acq.read_qrb1(path)
    codes = block.codes_i if channel == 1 else block.codes_q
    return block, codes.astype(np.float64)


def _cmd_autocorr(args) -> int:
    _load_config(args)
    block, x = _read_channel(args.infile, args.channel)
    r = dsp_mod.autocorrelation(x, args.max_lag)
    lines = ["# lag autocorrelation"]
    lines += [f"{k} {r[k]!r}" for k in range(r.size)]
    text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _cmd_spectrum(args) -> int:
    cfg = _load_config(args)
    block, x = _read_channel(args.infile, args.channel)
    x *= block.adc.lsb  # codes -> volts
    psd = dsp_mod.welch_psd(x, block.adc.sample_rate, args.segment_length, args.overlap)
    lines = ["# frequency_hz psd_v2_per_hz"]
    if args.compare:
        off_block, y = _read_channel(args.compare, args.channel)
        y *= off_block.adc.lsb
        psd_off = dsp_mod.welch_psd(
            y, off_block.adc.sample_rate, args.segment_length, args.overlap
        )
        gap = dsp_mod.band_gap_db(psd, psd_off, cfg.band())
        lines.append(f"# band_gap_db={gap!r}")
    lines += [
        f"{f!r} {p!r}" for f, p in zip(psd.frequencies, psd.power)
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_pipeline(cfg, write_files=not args.no_files)
    print(result.report_text, end="")
    if result.battery is not None and not result.battery.all_passed:
        return EXIT_TESTS
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hetqrng",
        description="heterodyne QRNG simulator and certification toolchain",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate ADC sample stream to a QRB1 file")
    _add_common(p)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="run the LO power sweep and fit it")
    _add_common(p)
    p.add_argument("--powers", help="comma-separated LO powers [W]")
    p.add_argument("--samples-per-point", type=int, default=1_000_000)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("entropy", help="emit an entropy certificate")
    _add_common(p)
    p.add_argument("--delta-q", type=float)
    p.add_argument("--delta-p", type=float)
    p.add_argument("--var-q", type=float)
    p.add_argument("--var-p", type=float)
    p.add_argument("--rate", type=float, help="samples per second")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_entropy)

    p = sub.add_parser("filter", help="brick-wall filter + decimate a QRB1 file")
    _add_common(p)
    p.add_argument("--in", dest="infile")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("autocorr", help="autocorrelation of a QRB1 channel")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--max-lag", type=int, default=100)
    p.add_argument("--channel", type=int, choices=(1, 2), default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_autocorr)

    p = sub.add_parser("spectrum", help="Welch PSD of a QRB1 channel")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--segment-length", type=int, default=4096)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--channel", type=int, choices=(1, 2), default=1)
    p.add_argument("--compare", help="QRB1 file to compare against (band gap)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("extract", help="Toeplitz-extract bits from a QRB1 file")
    _add_common(p)
    p.add_argument("--in", dest="infile")
    p.add_argument("--out")
    p.add_argument("--sidecar")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("test", help="statistical battery on an extracted bit file")
    _add_common(p)
    p.add_argument("--in", dest="infile")
    p.add_argument("--n-bits", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("run", help="full pipeline in one command")
    _add_common(p)
    p.add_argument("--no-files", action="store_true", help="report only, no artifacts")
    p.set_defaults(func=_cmd_run)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
