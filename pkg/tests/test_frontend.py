import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cransim.frontend import (
    FARROW_GROUP_DELAY,
    ChecksumError,
    FrontendChain,
    FrontendError,
    IncompleteSegmentsError,
    compress,
    decompress,
    dequantize,
    farrow_resample,
    quantize,
    reassemble,
    segment_spectrum,
)
from cransim.signal import BasebandSignal, Timestamp

F_S = 2.0e6
F_RES = float(2**21)


def snr_db(ref, est):
    return 10 * np.log10(np.sum(np.abs(ref) ** 2) / np.sum(np.abs(ref - est) ** 2))


def test_identity_ratio_is_bit_identical():
    x = BasebandSignal(np.random.default_rng(1).standard_normal(1000) + 0j, F_S, Timestamp(5, 0.5))
    y = farrow_resample(x, F_S)
    assert np.array_equal(x.samples, y.samples) and y.t0 == x.t0


def test_ratio_out_of_range():
    with pytest.raises(FrontendError):
        farrow_resample(BasebandSignal(np.ones(10), 1e6), 3e6)


def test_timestamp_conservation():
    x = BasebandSignal(np.ones(1000), F_S, Timestamp(123, 0.25))
    assert farrow_resample(x, F_RES).t0 == x.t0.add_seconds(FARROW_GROUP_DELAY)


def test_passband_amplitude_flat():
    n = np.arange(40000)
    for f in (10e3, 300e3, 0.75 * F_S / 2):
        x = BasebandSignal(np.exp(2j * np.pi * f * n / F_S), F_S)
        y = farrow_resample(x, F_RES).samples[200:-200]
        gain_db = 20 * np.log10(np.sqrt(np.mean(np.abs(y) ** 2)))
        assert abs(gain_db) <= 0.1


def test_quantize_zero_block():
    q = quantize(BasebandSignal(np.zeros(64), F_S), 16)
    assert q.scale == 1.0 and not np.any(q.payload)


@pytest.mark.parametrize("bits,floor", [(16, 88.0), (8, 40.0)])
def test_full_scale_sine_sqnr(bits, floor):
    n = np.arange(100000)
    x = np.exp(2j * np.pi * 0.01234 * n)
    y = dequantize(quantize(BasebandSignal(x, F_S), bits)).samples
    assert snr_db(x, y) >= floor


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([8, 16]))
def test_gaussian_sqnr_bound(seed, bits):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    q = quantize(BasebandSignal(x, F_S), bits)
    fs = 2 ** (bits - 1) - 1
    assert np.all(np.abs(q.payload.astype(int)) <= fs)
    y = dequantize(q).samples
    assert snr_db(x, y) >= 6.02 * bits - 10 - 12  # peak-normalized Gaussian loses ~12 dB crest


def test_single_subband_round_trip():
    rng = np.random.default_rng(2)
    fft_len = 1024
    x = rng.standard_normal(8 * fft_len) + 1j * rng.standard_normal(8 * fft_len)
    sig = BasebandSignal(x, F_RES, Timestamp(1000))
    y = reassemble(segment_spectrum(sig, 1, fft_len, 16))
    assert snr_db(x, y.samples) >= 80
    assert y.t0 == sig.t0 and len(y) == len(sig)


def test_subset_keeps_tone_energy():
    fft_len = 2048
    n = np.arange(4 * fft_len)
    width = fft_len // 8
    # centre bin of subband 3 in fftshift order
    f = (3 * width + width // 2 - fft_len // 2) * F_RES / fft_len
    x = np.exp(2j * np.pi * f * n / F_RES)
    segs = segment_spectrum(BasebandSignal(x, F_RES), 8, fft_len)
    y = reassemble([s for s in segs if s.subband_index == 3], require_complete=False).samples
    assert np.sum(np.abs(y) ** 2) >= 0.99 * np.sum(np.abs(x) ** 2)


def test_missing_segment_is_named():
    segs = segment_spectrum(BasebandSignal(np.ones(2048), F_RES), 8, 1024)
    with pytest.raises(IncompleteSegmentsError) as err:
        reassemble([s for s in segs if s.subband_index != 5])
    assert list(err.value.missing) == [5]
    assert "5" in str(err.value)


def test_compress_contract():
    assert decompress(compress(b"")) == b""
    zeros = bytes(2**16)
    assert len(compress(zeros)) < 0.01 * len(zeros)
    rnd = os.urandom(2**16)
    assert len(compress(rnd)) >= 0.99 * len(rnd)
    assert decompress(compress(rnd)) == rnd
    with pytest.raises(ChecksumError):
        bad = bytearray(compress(b"hello world" * 50))
        bad[-1] ^= 0xFF
        decompress(bytes(bad))


def test_sparse_spectrum_segment_compresses():
    fft_len = 4096
    n = np.arange(4 * fft_len)
    x = np.exp(2j * np.pi * 0.1 * n) + 1e-4 * np.random.default_rng(0).standard_normal(n.size)
    seg = segment_spectrum(BasebandSignal(x, F_RES), 1, fft_len)[0]
    raw = seg.payload.astype("<i2").tobytes()
    assert len(compress(raw)) <= 0.5 * len(raw)


def test_chain_identity_and_count_conservation():
    rng = np.random.default_rng(4)
    x = BasebandSignal(rng.standard_normal(60000) + 1j * rng.standard_normal(60000), F_S, Timestamp(10**9))
    chain = FrontendChain(F_RES, 2**14, 16)
    blocks = chain.digitize(x, 1)
    res = farrow_resample(x, F_RES)
    assert sum(b.n_samples for b in blocks) == len(res)
    y = np.concatenate([dequantize(b).samples for b in blocks])
    assert snr_db(res.samples, y) >= 80
    for b in blocks:
        assert b.block_ts == res.time_of(round((b.block_ts - res.t0) * F_RES))
