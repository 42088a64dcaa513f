import numpy as np
import pytest

from cransim.waveforms import (
    BANDWIDTH,
    SlotCollisionError,
    SooSpec,
    TelegramSpec,
    WaveformError,
    crc16,
    frame_bits,
    gen_soo,
    gen_telegram,
    hop_pattern,
    burst_symbols,
    burst_waveform,
    schedule_emitter,
)


def test_crc16_check_value():
    # CRC-16/CCITT-FALSE catalogue check value
    assert crc16(b"123456789") == 0x29B1


def test_two_burst_telegram_is_deterministic():
    spec = TelegramSpec(payload=b"\x5a", n_bursts=2, hop_pattern_seed=7)
    a, sa = gen_telegram(spec)
    b, sb = gen_telegram(spec)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(sa.starts, sb.starts)
    assert sa.starts.size == 2
    overlap = sa.starts[1] - sa.starts[0] < spec.burst_len
    assert not (overlap and sa.slots[0] == sa.slots[1])


def test_seeds_give_different_patterns():
    a = hop_pattern(TelegramSpec(hop_pattern_seed=7))
    b = hop_pattern(TelegramSpec(hop_pattern_seed=8))
    assert np.any(a.slots != b.slots) or np.any(a.starts != b.starts)


def test_slots_inside_band():
    spec = TelegramSpec()
    _, sched = gen_telegram(spec)
    assert np.all(np.abs(sched.freqs) <= BANDWIDTH / 2)
    assert np.all(np.abs(sched.freqs) + spec.occupied_bandwidth / 2 <= BANDWIDTH / 2)


def test_mean_burst_power_is_one():
    spec = TelegramSpec()
    sig, sched = gen_telegram(spec)
    # bursts in distinct slots are near-orthogonal, so energies add
    energy = np.sum(np.abs(sig.samples) ** 2)
    assert energy / (spec.n_bursts * spec.burst_len) == pytest.approx(1.0, rel=0.01)


def test_spectral_confinement():
    spec = TelegramSpec()
    sig, _ = gen_telegram(spec)
    psd = np.abs(np.fft.fft(sig.samples)) ** 2
    f = np.fft.fftfreq(len(sig), 1 / spec.sample_rate)
    assert psd[np.abs(f) <= BANDWIDTH / 2].sum() / psd.sum() >= 0.99


def test_schedule_matches_signal():
    spec = TelegramSpec()
    sig, sched = gen_telegram(spec)
    syms = burst_symbols(spec, frame_bits(spec.payload, spec.capacity_bits))
    n = np.arange(spec.burst_len)
    for i in range(6):
        s, f = sched.starts[i], sched.freqs[i]
        tmpl = burst_waveform(spec, syms[i])
        lo = max(0, s - 50)
        seg = sig.samples[lo:s + tmpl.size + 50]
        best = []
        for lag in range(seg.size - tmpl.size):
            mix = tmpl * np.exp(2j * np.pi * f * (lo + lag + n) / spec.sample_rate)
            best.append(abs(np.vdot(mix, seg[lag:lag + tmpl.size])))
        assert abs(lo + int(np.argmax(best)) - s) <= 1


def test_invalid_specs():
    with pytest.raises(WaveformError):
        TelegramSpec(payload=b"").validate()
    with pytest.raises(WaveformError):
        TelegramSpec(n_bursts=1).validate()
    with pytest.raises(WaveformError):
        TelegramSpec(freq_slots=(800e3,)).validate()
    with pytest.raises(WaveformError):
        TelegramSpec(payload=bytes(255), n_bursts=2).validate()


def test_crowded_slots_raise_collision():
    # one slot and bursts forced to overlap
    with pytest.raises(SlotCollisionError):
        hop_pattern(TelegramSpec(freq_slots=(0.0,), time_spread=0.5))


def test_frame_bits_layout():
    bits = frame_bits(b"\x01", 64)
    frame = np.packbits(bits[:32]).tobytes()
    assert frame[0] == 1 and frame[1] == 1
    assert int.from_bytes(frame[2:4], "big") == crc16(frame[:2])


def test_soo_bandwidth_clamp():
    spec = SooSpec(n_active_carriers=1500, sample_rate=2**21)
    assert spec.occupied_bandwidth == pytest.approx(1.536e6)
    with pytest.raises(WaveformError):
        SooSpec(n_active_carriers=1536, sample_rate=2**21).validate()


def test_soo_measured_bandwidth_and_power():
    spec = SooSpec(n_active_carriers=1500, sample_rate=2**21)
    x = gen_soo(spec, 0.05)
    assert np.mean(np.abs(x.samples) ** 2) == pytest.approx(1.0, rel=0.02)
    sym = spec.n_fft + spec.cp_len
    bodies = np.array([x.samples[k * sym + spec.cp_len:(k + 1) * sym] for k in range(8)])
    psd = (np.abs(np.fft.fft(bodies, axis=1)) ** 2).mean(axis=0)
    occupied = np.count_nonzero(psd > 1e-6 * psd.max())
    assert occupied == 1500
    assert occupied * spec.sample_rate / spec.n_fft == pytest.approx(1.536e6)


def test_soo_one_symbol_no_cp():
    spec = SooSpec(cp_len=0, sample_rate=2**21)
    x = gen_soo(spec, spec.n_fft / spec.sample_rate)
    assert len(x) == spec.n_fft


def test_soo_deterministic():
    spec = SooSpec(constellation_seed=3, sample_rate=2e6)
    assert np.array_equal(gen_soo(spec, 0.01).samples, gen_soo(spec, 0.01).samples)


def test_soo_too_short():
    with pytest.raises(WaveformError):
        gen_soo(SooSpec(), 1e-6)


@pytest.mark.parametrize("interval,total,count", [(90, 9 * 3600, 361), (1, 1, 2), (90, 89, 1)])
def test_schedule_emitter(interval, total, count):
    epochs = schedule_emitter(interval, total)
    assert len(epochs) == count
    assert epochs[0] == 0 and epochs[-1] == (count - 1) * interval
