"""Deterministic, parallelizable Monte-Carlo BER engine.

Every trial owns a counter-based RNG substream keyed by (seed, SNR point
index, trial index), so per-trial results never depend on scheduling and
aggregate counts are identical for any worker count. Trials execute in
fixed-size batches; the stopping rule is evaluated only at batch boundaries,
which keeps the stopping decision worker-independent too.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .channel import build_block_circulant, draw_channel, snr_to_sigma2, transmit
from .codec import StimConfig, bit_partition, encode_frame
from .detectors import DEFAULT_ML_CAP, DETECTORS, MpParams, detect
from .ofdm import OfdmConfig, ofdm_detect, ofdm_modulate, ofdm_transmit

BATCH_FRAMES = 256

CSV_HEADER = (
    "snr_db,frames,bits_total,bit_errors_total,bit_errors_antenna,"
    "bit_errors_slot,bit_errors_symbol,frame_errors,ber"
)


@dataclass(frozen=True)
class SweepSpec:
    system: str  # "stim" | "ofdm"
    detector: str  # "ml" | "mmse" | "2ssd" | "3ssd"
    cfg: StimConfig | OfdmConfig
    snr_points: tuple[float, ...]
    min_frames: int = 1000
    max_frames: int = 100_000
    min_bit_errors: int = 100
    seed: int = 0
    mp: MpParams = field(default_factory=MpParams)
    ml_cap: int = DEFAULT_ML_CAP

    def __post_init__(self):
        if self.system not in ("stim", "ofdm"):
            raise ValueError(f"unknown system {self.system!r}")
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.system == "ofdm" and self.detector != "ml":
            raise ValueError("the OFDM baseline supports only ML detection")
        if not self.snr_points:
            raise ValueError("snr_points must be nonempty")
        if not 0 < self.min_frames <= self.max_frames:
            raise ValueError("need 0 < min_frames <= max_frames")

    @property
    def bits_per_frame(self) -> int:
        if self.system == "stim":
            return bit_partition(self.cfg).total
        return self.cfg.bits_per_frame


@dataclass
class BerRecord:
    snr_db: float
    frames: int
    bits_total: int
    bit_errors_total: int
    bit_errors_antenna: int
    bit_errors_slot: int
    bit_errors_symbol: int
    frame_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors_total / self.bits_total if self.bits_total else 0.0

    def csv_row(self) -> str:
        return (
            f"{self.snr_db:g},{self.frames},{self.bits_total},{self.bit_errors_total},"
            f"{self.bit_errors_antenna},{self.bit_errors_slot},{self.bit_errors_symbol},"
            f"{self.frame_errors},{self.ber:.10e}"
        )


def trial_rng(seed: int, point_index: int, trial_index: int) -> np.random.Generator:
    """Counter-based substream: Philox keyed by seed with the (point, trial)
    pair placed in the high counter words."""
    return np.random.Generator(
        np.random.Philox(key=seed, counter=[0, 0, point_index, trial_index])
    )


def _run_trial(spec: SweepSpec, point_index: int, trial: int, sigma2: float):
    """One frame: returns (antenna, slot, symbol, frame) error counts."""
    rng = trial_rng(spec.seed, point_index, trial)
    cfg = spec.cfg
    ch = draw_channel(rng, cfg)
    if spec.system == "stim":
        part = bit_partition(cfg)
        bits = rng.integers(0, 2, part.total, dtype=np.int8)
        frame = encode_frame(bits, cfg)
        y = transmit(frame, ch, sigma2, rng)
        h = build_block_circulant(ch, cfg.n_slots)
        res = detect(spec.detector, y, h, sigma2, cfg, spec.mp, spec.ml_cap)
        wrong = res.bits != bits
        e_ant = int(wrong[: part.antenna_bits].sum())
        e_slot = int(wrong[part.antenna_bits : part.antenna_bits + part.slot_bits].sum())
        e_sym = int(wrong[part.antenna_bits + part.slot_bits :].sum())
    else:
        bits = rng.integers(0, 2, cfg.bits_per_frame, dtype=np.int8)
        block = ofdm_modulate(bits, cfg)
        y = ofdm_transmit(block, ch, sigma2, rng)
        out = ofdm_detect(y, ch, sigma2, cfg)
        e_ant = e_slot = 0
        e_sym = int((out != bits).sum())
    total = e_ant + e_slot + e_sym
    return e_ant, e_slot, e_sym, int(total > 0)


def _run_trial_range(args):
    spec, point_index, lo, hi, sigma2 = args
    acc = np.zeros(4, dtype=np.int64)
    for t in range(lo, hi):
        acc += _run_trial(spec, point_index, t, sigma2)
    return acc


def run_ber_point(spec: SweepSpec, snr_db: float, workers: int = 1) -> BerRecord:
    """Estimate BER at one SNR point of the sweep grid.

    Runs frames until min_bit_errors and min_frames are both met (checked at
    fixed batch boundaries) or max_frames is reached.
    """
    point_index = spec.snr_points.index(snr_db)
    sigma2 = snr_to_sigma2(snr_db, spec.cfg.l_taps)
    acc = np.zeros(4, dtype=np.int64)
    frames = 0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while frames < spec.max_frames:
            hi = min(frames + BATCH_FRAMES, spec.max_frames)
            if pool is None:
                acc += _run_trial_range((spec, point_index, frames, hi, sigma2))
            else:
                edges = np.linspace(frames, hi, workers + 1, dtype=int)
                tasks = [
                    (spec, point_index, int(lo), int(up), sigma2)
                    for lo, up in zip(edges[:-1], edges[1:])
                    if up > lo
                ]
                for part in pool.map(_run_trial_range, tasks):
                    acc += part
            frames = hi
            errors = int(acc[0] + acc[1] + acc[2])
            if errors >= spec.min_bit_errors and frames >= spec.min_frames:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return BerRecord(
        snr_db=snr_db,
        frames=frames,
        bits_total=frames * spec.bits_per_frame,
        bit_errors_total=int(acc[0] + acc[1] + acc[2]),
        bit_errors_antenna=int(acc[0]),
        bit_errors_slot=int(acc[1]),
        bit_errors_symbol=int(acc[2]),
        frame_errors=int(acc[3]),
    )


def _spec_echo(spec: SweepSpec) -> str:
    cfg = spec.cfg
    parts = [f"system={spec.system}", f"detector={spec.detector}", f"nt={cfg.n_t}",
             f"nr={cfg.n_r}", f"n_slots={cfg.n_slots}"]
    if spec.system == "stim":
        parts.append(f"k={cfg.k}")
    parts += [
        f"l_taps={cfg.l_taps}",
        f"alphabet={cfg.alphabet.kind}",
        f"iters={spec.mp.max_iterations}",
        f"damp={spec.mp.damping:g}",
        f"seed={spec.seed}",
        f"min_frames={spec.min_frames}",
        f"max_frames={spec.max_frames}",
        f"min_bit_errors={spec.min_bit_errors}",
        f"version={__version__}",
    ]
    return " ".join(parts)


def sweep_csv(spec: SweepSpec, records: list[BerRecord], deterministic: bool = False) -> str:
    lines = ["# stimsim ber sweep", f"# {_spec_echo(spec)}"]
    if not deterministic:
        import datetime

        lines.append(f"# generated={datetime.datetime.now().isoformat()}")
    lines.append(CSV_HEADER)
    lines += [r.csv_row() for r in records]
    return "\n".join(lines) + "\n"


def run_sweep(
    spec: SweepSpec,
    out_path: str | None = None,
    workers: int = 1,
    deterministic: bool = False,
) -> list[BerRecord]:
    """Run every SNR point of the sweep and optionally write the CSV."""
    records = [run_ber_point(spec, snr, workers=workers) for snr in spec.snr_points]
    if out_path is not None:
        text = sweep_csv(spec, records, deterministic=deterministic)
        with open(out_path, "w") as fh:
            fh.write(text)
    return records
