import numpy as np
import pytest

from stimsim.alphabet import build_alphabet
from stimsim.channel import build_block_circulant, draw_channel, snr_to_sigma2, transmit
from stimsim.codec import StimConfig, bit_partition, encode_frame
from stimsim.detectors import (
    MpParams,
    detect,
    ml_detect,
    mmse_detect,
    mmse_stage,
    normalize_messages,
    reduce_model,
    ssd2_detect,
    ssd3_detect,
)

QAM4 = build_alphabet("qam4")
BPSK = build_alphabet("bpsk")

FIG5 = StimConfig(2, 4, 8, 7, 2, QAM4)
FIG4 = StimConfig(2, 4, 6, 5, 2, QAM4)


def run_link(rng, cfg, snr_db):
    part = bit_partition(cfg)
    bits = rng.integers(0, 2, part.total, dtype=np.int8)
    frame = encode_frame(bits, cfg)
    ch = draw_channel(rng, cfg)
    h = build_block_circulant(ch, cfg.n_slots)
    sigma2 = snr_to_sigma2(snr_db, cfg.l_taps) if snr_db is not None else 0.0
    y = transmit(frame, ch, sigma2, rng)
    return bits, frame, h, y, sigma2


# ---------------------------------------------------------------------------
# normalize_messages
# ---------------------------------------------------------------------------


def test_normalize_messages_basic():
    assert np.allclose(normalize_messages(np.array([2.0, 2.0])), [0.5, 0.5])
    assert np.allclose(normalize_messages(np.array([0.0, 0.0])), [0.5, 0.5])
    assert np.allclose(normalize_messages(np.array([1.0, 3.0])), [0.25, 0.75])


def test_normalize_log_linear_agreement():
    rng = np.random.default_rng(0)
    for _ in range(200):
        raw = rng.uniform(0.01, 5.0, size=rng.integers(2, 9))
        linear = normalize_messages(raw)
        logs = np.log(raw)
        log_path = np.exp(logs - logs.max())
        log_path /= log_path.sum()
        assert np.abs(linear - log_path).max() < 1e-12


# ---------------------------------------------------------------------------
# ML
# ---------------------------------------------------------------------------


def test_ml_noiseless_recovery():
    rng = np.random.default_rng(1)
    for _ in range(20):
        bits, _, h, y, _ = run_link(rng, FIG4, None)
        assert np.array_equal(ml_detect(y, h, FIG4).bits, bits)


def test_ml_candidate_count_fig4():
    rng = np.random.default_rng(2)
    _, _, h, y, _ = run_link(rng, FIG4, 10.0)
    res = ml_detect(y, h, FIG4)
    assert res.diagnostics["candidates"] == 2**17


def test_ml_beats_random_candidates():
    rng = np.random.default_rng(3)
    bits, _, h, y, _ = run_link(rng, FIG4, 6.0)
    res = ml_detect(y, h, FIG4)
    part = bit_partition(FIG4)
    for _ in range(1000):
        cand = encode_frame(rng.integers(0, 2, part.total, dtype=np.int8), FIG4)
        x = cand.b_mat.T.reshape(-1)
        assert res.diagnostics["final_residual"] <= np.sum(np.abs(y - h @ x) ** 2) + 1e-9


def test_ml_cap_refusal():
    rng = np.random.default_rng(4)
    _, _, h, y, _ = run_link(rng, FIG5, 10.0)
    with pytest.raises(ValueError, match="2ssd"):
        ml_detect(y, h, FIG5, cap=2**22)


def test_per_slot_candidate_vectors_nt2_bpsk():
    # the n_t |A| one-active-antenna vectors for n_t=2, BPSK, unnormalized:
    # (1,0), (-1,0), (0,1), (0,-1)
    from stimsim.detectors import _MlCandidates

    cfg = StimConfig(2, 1, 2, 1, 1, build_alphabet("bpsk", normalize=False))
    cand = _MlCandidates(cfg)
    expected = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=complex)
    assert np.array_equal(cand.w_a, expected)


# ---------------------------------------------------------------------------
# MMSE stage
# ---------------------------------------------------------------------------


def test_mmse_zero_forcing_limit():
    rng = np.random.default_rng(5)
    h = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    x_hat, _ = mmse_stage(h @ x, h, 0.0, n_t=1)
    assert np.abs(x_hat - x).max() < 1e-5


def test_mmse_single_antenna_indices():
    rng = np.random.default_rng(6)
    cfg = StimConfig(1, 2, 4, 3, 2, QAM4)
    _, _, h, y, s2 = run_link(rng, cfg, 10.0)
    _, idx = mmse_stage(y, h, s2, n_t=1)
    assert np.array_equal(idx, np.zeros(4, dtype=int))


def test_mmse_antenna_accuracy_high_snr():
    rng = np.random.default_rng(7)
    correct = total = 0
    for _ in range(200):
        bits, frame, h, y, s2 = run_link(rng, FIG5, 30.0)
        _, idx = mmse_stage(y, h, s2, FIG5.n_t)
        correct += int(np.sum(idx[frame.sap] == frame.antennas))
        total += frame.sap.size
    assert correct / total > 0.95


def test_reduce_model_identity_and_indexing():
    rng = np.random.default_rng(8)
    h = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    assert np.array_equal(reduce_model(h, np.zeros(8, dtype=int), 1), h)
    h2 = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    picked = reduce_model(h2, np.zeros(4, dtype=int), 2)
    assert np.array_equal(picked, h2[:, [0, 2, 4, 6]])


def test_reduce_model_support_identity():
    # H-bar z equals H x when x is supported exactly on the picked columns
    rng = np.random.default_rng(9)
    n, n_t = 5, 2
    h = rng.standard_normal((10, n * n_t)) + 1j * rng.standard_normal((10, n * n_t))
    idx = rng.integers(0, n_t, n)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x = np.zeros(n * n_t, dtype=complex)
    x[np.arange(n) * n_t + idx] = z
    assert np.abs(reduce_model(h, idx, n_t) @ z - h @ x).max() < 1e-12


# ---------------------------------------------------------------------------
# 2SSD vs a plain-loop reference of the same message schedule
# ---------------------------------------------------------------------------


def reference_ssd2_posteriors(y, h, sigma2, cfg, iters, damp):
    """Unvectorized transcription of the two-stage message equations."""
    n, k = cfg.n_slots, cfg.k
    _, ant = mmse_stage(y, h, sigma2, cfg.n_t)
    hb = reduce_model(h, ant, cfg.n_t)
    n_obs = y.size
    vals = np.concatenate([[0.0 + 0.0j], cfg.alphabet.points])
    nv = vals.size
    b = np.full((n, nv), 1.0 / nv)
    q = np.tile([1.0 - k / n, k / n], (n, 1))
    for _ in range(iters):
        mean_z = np.array([np.sum(b[l] * vals) for l in range(n)])
        var_z = np.array(
            [np.sum(b[l] * np.abs(vals) ** 2) - abs(mean_z[l]) ** 2 for l in range(n)]
        )
        v = np.zeros((n_obs, n, nv))
        for i in range(n_obs):
            for l in range(n):
                mu = sum(hb[i, j] * mean_z[j] for j in range(n) if j != l)
                s2 = sum(abs(hb[i, j]) ** 2 * var_z[j] for j in range(n) if j != l) + sigma2
                w = np.exp(-np.abs(y[i] - mu - vals * hb[i, l]) ** 2 / max(s2, 1e-12))
                v[i, l] = normalize_messages(w)
        u = np.zeros((n, 2))
        for l in range(n):
            phi = np.ones(1)
            for j in range(n):
                if j != l:
                    phi = np.convolve(phi, q[j])
            used = phi[k - 1] if k - 1 < phi.size else 0.0
            unused = phi[k] if k < phi.size else 0.0
            u[l] = normalize_messages(np.array([unused, used]))
        b_new = np.zeros_like(b)
        q_new = np.zeros_like(q)
        for l in range(n):
            prod = np.prod(v[:, l, :], axis=0)
            b_new[l] = normalize_messages(prod * u[l, [0] + [1] * (nv - 1)])
            q_new[l] = normalize_messages(np.array([prod[0], prod[1:].sum()]))
        b = damp * b_new + (1 - damp) * b
        q = damp * q_new + (1 - damp) * q
    return q


@pytest.mark.parametrize("damp", [1.0, 0.3])
def test_ssd2_matches_loop_reference(damp):
    rng = np.random.default_rng(10)
    cfg = StimConfig(2, 2, 4, 3, 2, QAM4)
    for _ in range(5):
        bits, _, h, y, s2 = run_link(rng, cfg, 9.0)
        res = ssd2_detect(y, h, s2, cfg, MpParams(max_iterations=3, damping=damp))
        q_ref = reference_ssd2_posteriors(y, h, s2, cfg, 3, damp)
        assert np.abs(res.diagnostics["slot_posteriors"] - q_ref).max() < 1e-9


def test_ssd2_posteriors_are_pmfs():
    rng = np.random.default_rng(11)
    for _ in range(10):
        _, _, h, y, s2 = run_link(rng, FIG5, 6.0)
        q = ssd2_detect(y, h, s2, FIG5).diagnostics["slot_posteriors"]
        assert np.all(q >= 0)
        assert np.abs(q.sum(axis=1) - 1.0).max() < 1e-9


def test_ssd2_noiseless_consistency():
    rng = np.random.default_rng(12)
    s2 = snr_to_sigma2(60.0, 2)
    for _ in range(25):
        bits, _, h, y, _ = run_link(rng, FIG5, 60.0)
        assert np.array_equal(ssd2_detect(y, h, s2, FIG5).bits, bits)


def test_ssd2_internal_consistency():
    from stimsim.codec import decode_frame

    rng = np.random.default_rng(13)
    for _ in range(10):
        _, _, h, y, s2 = run_link(rng, FIG5, 5.0)
        res = ssd2_detect(y, h, s2, FIG5)
        assert np.array_equal(decode_frame(res.sap, res.antennas, res.symbols, FIG5), res.bits)


# ---------------------------------------------------------------------------
# 3SSD
# ---------------------------------------------------------------------------


def test_ssd3_noiseless_consistency():
    rng = np.random.default_rng(14)
    s2 = snr_to_sigma2(60.0, 2)
    for _ in range(25):
        bits, _, h, y, _ = run_link(rng, FIG5, 60.0)
        assert np.array_equal(ssd3_detect(y, h, s2, FIG5).bits, bits)


def test_ssd3_single_slot_matched_filter():
    # with k=1 there is no interference: the decision must match the
    # nearest-candidate rule over the n_t |A| per-slot vectors
    rng = np.random.default_rng(15)
    cfg = StimConfig(2, 8, 2, 1, 2, QAM4)
    pts = cfg.alphabet.points
    for _ in range(25):
        bits, _, h, y, s2 = run_link(rng, cfg, 6.0)
        res = ssd3_detect(y, h, s2, cfg)
        slot = int(res.sap[0])
        g = h[:, slot * 2 : slot * 2 + 2]
        best = None
        for t in range(2):
            for m in range(4):
                w = np.zeros(2, dtype=complex)
                w[t] = pts[m]
                val = np.sum(np.abs(y - g @ w) ** 2)
                if best is None or val < best[0]:
                    best = (val, t, pts[m])
        assert res.antennas[0] == best[1]
        assert res.symbols[0] == best[2]


def test_ssd3_not_worse_than_ssd2():
    rng = np.random.default_rng(16)
    e2 = e3 = bits_seen = 0
    for _ in range(800):
        bits, _, h, y, s2 = run_link(rng, FIG5, 8.0)
        e2 += int((ssd2_detect(y, h, s2, FIG5).bits != bits).sum())
        e3 += int((ssd3_detect(y, h, s2, FIG5).bits != bits).sum())
        bits_seen += bits.size
    p2, p3 = e2 / bits_seen, e3 / bits_seen
    margin = 2 * np.sqrt((p2 * (1 - p2) + p3 * (1 - p3)) / bits_seen)
    assert p3 <= p2 + margin


def test_ml_not_worse_than_ssd3():
    rng = np.random.default_rng(17)
    em = e3 = bits_seen = 0
    for _ in range(1200):
        bits, _, h, y, s2 = run_link(rng, FIG4, 8.0)
        em += int((ml_detect(y, h, FIG4).bits != bits).sum())
        e3 += int((ssd3_detect(y, h, s2, FIG4).bits != bits).sum())
        bits_seen += bits.size
    pm, p3 = em / bits_seen, e3 / bits_seen
    margin = 2 * np.sqrt((pm * (1 - pm) + p3 * (1 - p3)) / bits_seen)
    assert pm <= p3 + margin


# ---------------------------------------------------------------------------
# MMSE receiver and dispatch
# ---------------------------------------------------------------------------


def test_mmse_detect_high_snr():
    rng = np.random.default_rng(18)
    errs = 0
    for _ in range(50):
        bits, _, h, y, s2 = run_link(rng, FIG5, 40.0)
        errs += int((mmse_detect(y, h, s2, FIG5).bits != bits).sum())
    assert errs == 0


def test_detect_dispatch():
    rng = np.random.default_rng(19)
    bits, _, h, y, s2 = run_link(rng, FIG4, 30.0)
    for name in ("ml", "mmse", "2ssd", "3ssd"):
        res = detect(name, y, h, s2, FIG4)
        assert res.bits.size == bits.size
    with pytest.raises(ValueError):
        detect("zf", y, h, s2, FIG4)


def test_damping_validation():
    with pytest.raises(ValueError):
        MpParams(damping=0.0)
    with pytest.raises(ValueError):
        MpParams(max_iterations=0)
