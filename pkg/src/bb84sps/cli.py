"""Experiment runner: gain sweeps, detection-statistics tables, two-process
key exchange, and register dumps.

Subcommands
-----------
simulate-gain   Analytic secure gain per pulse versus channel attenuation
                for the configured sub-Poissonian source, equal-intensity
                coherent pulses, and intensity-optimized coherent pulses.
                Deterministic (no sampling); CSV plus a PNG figure.
table1          Monte Carlo detection statistics (raw size, detection
                probability, error rate) across a list of channel
                transmissions; means and standard errors over --trials
                sessions.  CSV plus a PNG figure.
keyexchange     One full key exchange as either role over TCP; writes the
                distilled key (hex) and a key=value report.
lfsr-dump       ASCII 0/1 dump of a register's output stream for
                cross-implementation comparison.

Config files are flat ``key=value`` text (``#`` comments allowed); see
DEFAULT_CONFIG for the full key set and defaults.  ``--seed`` replaces the
quantum and classical seeds deterministically, so two processes given the
same ``--seed`` and config share one simulated transmission.

Exit codes: 0 success; 10 negotiated-parameter mismatch; 11 error-rate
abort; 12 transport failure; 13 no secure rate (empty key); 14 protocol
violation; 15 not enough sifted data.
"""

from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from .errors import ChannelClosed, ChannelTimeout, ProtocolViolation, SessionAbort
from .lfsr import PERIOD, full_period_bits
from .optics import DetectorParams, LinkParams, QberModel
from .protocol import (
    AliceSession,
    BobSession,
    SessionConfig,
    SessionSeeds,
    run_quantum_phase,
    sift,
)
from .reconcile import gain_at, optimize_mu_wcp
from .sources import SourceModel
from .wire import (
    ABORT_INSUFFICIENT_DATA,
    ABORT_PARAMETER_MISMATCH,
    ABORT_QBER_TOO_HIGH,
    ABORT_TOO_MANY_MULTI_DETECTIONS,
    ABORT_VERIFY_FAILED,
    connect_channel,
    listen_channel,
)

EXIT_OK = 0
EXIT_PARAMETER_MISMATCH = 10
EXIT_QBER_ABORT = 11
EXIT_TRANSPORT_FAILURE = 12
EXIT_NO_SECURE_RATE = 13
EXIT_PROTOCOL_VIOLATION = 14
EXIT_INSUFFICIENT_DATA = 15

DEFAULT_CONFIG: dict[str, str] = {
    "source": "sps",
    "mu": "0.0235",
    "reduction_factor": "6.7",
    "transmission": "1.0",
    "link_efficiency": "0.322",
    "alpha": "1.3e-2",
    "p_dark": "3.5e-5",
    "dark_rate_h": "60",
    "dark_rate_v": "70",
    "dark_rate_l": "350",
    "dark_rate_r": "150",
    "gate_width": "60e-9",
    "repetition_rate": "5.3e6",
    "signal_gate_fraction": "0.82",
    "pulses_per_session": "1048575",
    "qber_sample_fraction": "0.01",
    "qber_abort_threshold": "0.125",
    "min_sample_bits": "30",
    "ambiguous_fraction_limit": "0.01",
    "safety_margin_bits": "30",
    "verify_hash_bits": "64",
    "message_timeout": "30",
    "seed_quantum": "2003",
    "seed_lfsr_data": "0x5A5A5",
    "seed_lfsr_basis": "0x2B3C4",
    "seed_classical": "31337",
}

TABLE1_TRANSMISSIONS = (1.0, 0.498, 0.25, 0.128, 0.057)


def parse_config_file(path: str) -> dict[str, str]:
    values = dict(DEFAULT_CONFIG)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULT_CONFIG:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def _int(v: str) -> int:
    return int(v, 0)  # accepts decimal and 0x-prefixed values


def build_session_config(values: dict[str, str], master_seed: int | None = None) -> SessionConfig:
    if values["source"] == "sps":
        source = SourceModel.sps(float(values["mu"]), float(values["reduction_factor"]))
    elif values["source"] == "wcp":
        source = SourceModel.wcp(float(values["mu"]))
    else:
        raise ValueError(f"source must be 'sps' or 'wcp', got {values['source']!r}")
    link = LinkParams(
        transmission=float(values["transmission"]),
        link_efficiency=float(values["link_efficiency"]),
    )
    detector = DetectorParams(
        dark_rates=(
            float(values["dark_rate_h"]),
            float(values["dark_rate_v"]),
            float(values["dark_rate_l"]),
            float(values["dark_rate_r"]),
        ),
        gate_width=float(values["gate_width"]),
        repetition_rate=float(values["repetition_rate"]),
        signal_gate_fraction=float(values["signal_gate_fraction"]),
    )
    if master_seed is not None:
        derived = np.random.SeedSequence(master_seed).generate_state(2, dtype=np.uint64)
        seed_quantum, seed_classical = int(derived[0]), int(derived[1])
    else:
        seed_quantum = _int(values["seed_quantum"])
        seed_classical = _int(values["seed_classical"])
    seeds = SessionSeeds(
        quantum=seed_quantum,
        lfsr_data=_int(values["seed_lfsr_data"]),
        lfsr_basis=_int(values["seed_lfsr_basis"]),
        classical=seed_classical,
    )
    return SessionConfig(
        source=source,
        link=link,
        detector=detector,
        seeds=seeds,
        pulses_per_session=_int(values["pulses_per_session"]),
        qber_sample_fraction=float(values["qber_sample_fraction"]),
        qber_abort_threshold=float(values["qber_abort_threshold"]),
        min_sample_bits=_int(values["min_sample_bits"]),
        ambiguous_fraction_limit=float(values["ambiguous_fraction_limit"]),
        alpha=float(values["alpha"]),
        safety_margin_bits=_int(values["safety_margin_bits"]),
        verify_hash_bits=_int(values["verify_hash_bits"]),
        message_timeout=float(values["message_timeout"]),
    )


def _figure_path(out: str) -> str:
    return out[: -len(".csv")] + ".png" if out.endswith(".csv") else out + ".png"


# ---------------------------------------------------------------------------
# simulate-gain


def simulate_gain_rows(values: dict[str, str], attenuations_db) -> list[dict]:
    mu = float(values["mu"])
    eta = float(values["link_efficiency"])
    model = QberModel(alpha=float(values["alpha"]), p_dark=float(values["p_dark"]))
    sps = SourceModel.sps(mu, float(values["reduction_factor"]))
    wcp = SourceModel.wcp(mu)
    rows = []
    for db in attenuations_db:
        t = 10.0 ** (-db / 10.0)
        g_sps = gain_at(sps, t, eta, model)
        g_fixed = gain_at(wcp, t, eta, model)
        mu_opt, g_opt = optimize_mu_wcp(t, eta, model)
        rows.append({
            "attenuation_db": float(db),
            "g_sps": g_sps,
            "g_wcp_fixed_mu": g_fixed,
            "g_wcp_opt": g_opt,
            "mu_opt": mu_opt,
        })
    return rows


def _write_gain_csv(rows: list[dict], out: str) -> None:
    header = (
        "attenuation_db,g_sps_bits_per_pulse,g_wcp_fixed_mu_bits_per_pulse,"
        "g_wcp_opt_bits_per_pulse,mu_opt_photons_per_pulse,"
        "sps_insecure,wcp_fixed_insecure,wcp_opt_insecure\n"
    )
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(header)
        for r in rows:
            mu_opt = "" if r["mu_opt"] is None else f"{r['mu_opt']:.10e}"
            fh.write(
                f"{r['attenuation_db']:.4f},{r['g_sps']:.10e},"
                f"{r['g_wcp_fixed_mu']:.10e},{r['g_wcp_opt']:.10e},{mu_opt},"
                f"{int(r['g_sps'] == 0)},{int(r['g_wcp_fixed_mu'] == 0)},"
                f"{int(r['g_wcp_opt'] == 0)}\n"
            )


def cmd_simulate_gain(args) -> int:
    values = parse_config_file(args.config) if args.config else dict(DEFAULT_CONFIG)
    if args.attenuation_db:
        dbs = [float(x) for x in args.attenuation_db.split(",")]
    else:
        dbs = [round(0.25 * i, 2) for i in range(57)]  # 0 .. 14 dB
    rows = simulate_gain_rows(values, dbs)
    _write_gain_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    if not args.no_figure:
        from .figures import save_gain_figure

        fig_path = _figure_path(args.out)
        save_gain_figure(rows, fig_path)
        print(f"wrote {fig_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# table1


def detection_statistics_rows(
    values: dict[str, str], transmissions, trials: int, base_seed: int
) -> list[dict]:
    rows = []
    base_cfg = build_session_config(values)
    for row_index, t in enumerate(transmissions):
        raws, p_exps, qbers = [], [], []
        for trial in range(trials):
            seeds = SessionSeeds(
                quantum=base_seed + 1009 * row_index + trial,
                lfsr_data=base_cfg.seeds.lfsr_data,
                lfsr_basis=base_cfg.seeds.lfsr_basis,
                classical=base_cfg.seeds.classical,
            )
            cfg = SessionConfig(
                source=base_cfg.source,
                link=LinkParams(transmission=float(t),
                                link_efficiency=base_cfg.link.link_efficiency),
                detector=base_cfg.detector,
                seeds=seeds,
                pulses_per_session=base_cfg.pulses_per_session,
                alpha=base_cfg.alpha,
            )
            alice_log, bob_log = run_quantum_phase(cfg)
            alice_key, bob_key = sift(alice_log, bob_log)
            raws.append(len(bob_log.slot_indices))
            p_exps.append(len(bob_log.slot_indices) / cfg.pulses_per_session)
            if len(alice_key):
                qbers.append(float(np.mean(alice_key.bits != bob_key.bits)))
            else:
                qbers.append(0.0)
        rows.append({
            "transmission": float(t),
            "attenuation_db": -10.0 * math.log10(float(t)) + 0.0,
            "raw_mean": float(np.mean(raws)),
            "raw_stderr": float(np.std(raws, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
            "p_exp_mean": float(np.mean(p_exps)),
            "p_exp_stderr": float(np.std(p_exps, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
            "qber_mean": float(np.mean(qbers)),
            "qber_stderr": float(np.std(qbers, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
        })
    return rows


def _write_table_csv(rows: list[dict], out: str) -> None:
    header = (
        "transmission,attenuation_db,raw_mean_bits,raw_stderr_bits,"
        "p_exp_mean_per_slot,p_exp_stderr_per_slot,"
        "qber_mean_percent,qber_stderr_percent\n"
    )
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(header)
        for r in rows:
            fh.write(
                f"{r['transmission']:.6f},{r['attenuation_db']:.4f},"
                f"{r['raw_mean']:.3f},{r['raw_stderr']:.3f},"
                f"{r['p_exp_mean']:.8e},{r['p_exp_stderr']:.8e},"
                f"{100 * r['qber_mean']:.4f},{100 * r['qber_stderr']:.4f}\n"
            )


def cmd_table1(args) -> int:
    values = parse_config_file(args.config) if args.config else dict(DEFAULT_CONFIG)
    if args.trials < 1:
        print("--trials must be >= 1", file=sys.stderr)
        return EXIT_PARAMETER_MISMATCH
    transmissions = (
        [float(x) for x in args.attenuation.split(",")]
        if args.attenuation else list(TABLE1_TRANSMISSIONS)
    )
    base_seed = args.seed if args.seed is not None else _int(values["seed_quantum"])
    started = time.monotonic()
    rows = detection_statistics_rows(values, transmissions, args.trials, base_seed)
    _write_table_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows, {args.trials} trials, "
          f"{time.monotonic() - started:.1f} s)")
    if not args.no_figure:
        from .figures import save_detection_figure

        fig_path = _figure_path(args.out)
        save_detection_figure(rows, fig_path)
        print(f"wrote {fig_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# keyexchange


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_keyexchange(args) -> int:
    values = parse_config_file(args.config) if args.config else dict(DEFAULT_CONFIG)
    cfg = build_session_config(values, master_seed=args.seed)
    try:
        if args.listen:
            host, port = _parse_endpoint(args.listen)
            channel, _ = listen_channel(host, port, timeout=cfg.message_timeout)
        else:
            host, port = _parse_endpoint(args.connect)
            channel = connect_channel(host, port, timeout=cfg.message_timeout)
    except (ChannelTimeout, OSError) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT_FAILURE

    session = AliceSession(cfg) if args.role == "alice" else BobSession(cfg)
    try:
        secret, report = session.run(channel)
    except SessionAbort as exc:
        print(f"session aborted: {exc}", file=sys.stderr)
        return {
            ABORT_PARAMETER_MISMATCH: EXIT_PARAMETER_MISMATCH,
            ABORT_QBER_TOO_HIGH: EXIT_QBER_ABORT,
            ABORT_TOO_MANY_MULTI_DETECTIONS: EXIT_QBER_ABORT,
            ABORT_VERIFY_FAILED: EXIT_PROTOCOL_VIOLATION,
            ABORT_INSUFFICIENT_DATA: EXIT_INSUFFICIENT_DATA,
        }.get(exc.reason, EXIT_PROTOCOL_VIOLATION)
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL_VIOLATION
    except (ChannelClosed, ChannelTimeout) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT_FAILURE
    finally:
        channel.close()

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(secret.to_hex() + "\n")
    with open(args.out + ".report", "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    print(f"final key: {report.final_length} bits -> {args.out}")
    if report.final_length == 0:
        print("no secure rate at these parameters", file=sys.stderr)
        return EXIT_NO_SECURE_RATE
    return EXIT_OK


# ---------------------------------------------------------------------------
# lfsr-dump


def cmd_lfsr_dump(args) -> int:
    seed = _int(args.seed)
    count = args.count
    period = full_period_bits(seed)
    reps = -(-count // PERIOD)
    bits = np.tile(period, reps)[:count]
    text = "".join("1" if b else "0" for b in bits)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bb84sps",
        description="BB84 key distribution simulator and reproduction harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-gain", help="analytic secure-gain sweep (CSV + PNG)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--attenuation-db", help="comma-separated attenuations in dB")
    p.add_argument("--out", default="gain.csv", help="output CSV path")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG")
    p.set_defaults(func=cmd_simulate_gain)

    p = sub.add_parser("table1", help="Monte Carlo detection statistics (CSV + PNG)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--trials", type=int, default=10, help="sessions per row")
    p.add_argument("--attenuation", help="comma-separated channel transmissions")
    p.add_argument("--seed", type=int, help="base seed for the Monte Carlo")
    p.add_argument("--out", default="detection_stats.csv", help="output CSV path")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("keyexchange", help="run one key exchange over TCP")
    p.add_argument("--role", choices=("alice", "bob"), required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--listen", metavar="HOST:PORT")
    group.add_argument("--connect", metavar="HOST:PORT")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config seeds)")
    p.add_argument("--out", required=True, help="key file path (hex); report at <out>.report")
    p.set_defaults(func=cmd_keyexchange)

    p = sub.add_parser("lfsr-dump", help="dump register output bits as ASCII 0/1")
    p.add_argument("--seed", required=True, help="nonzero 20-bit seed (decimal or 0x hex)")
    p.add_argument("--count", type=int, required=True, help="number of bits")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_lfsr_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
