import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anon_corpus import bit_accuracies
from orbfp.anonymizer import (
    block_permutation,
    segment_transitions,
    shuffle_indices,
    shuffle_transitions,
    transition_classes,
)
from orbfp.errors import ParameterError, SignalLengthError
from orbfp.protocol import build_sync_packet, bytes_to_bits
from orbfp.signal import IqBuffer, interpolate, sdpsk_modulate


def packet(sat_id=0x5C, dcn=3, mfc=40, ref_phase=0.0):
    bits = bytes_to_bits(build_sync_packet(sat_id, dcn, mfc))
    return bits, sdpsk_modulate(bits, ref_phase=ref_phase)


def class_bags(samples, classes, seg_len):
    """Sorted sample values per class, over the segment region only."""
    blocks = samples[: classes.size * seg_len].reshape(classes.size, seg_len)
    return {c: np.sort_complex(blocks[classes == c].ravel()) for c in range(4)}


def intra_block_bits(x, sps=2):
    # bit j+1 decided from the phase rotation inside block j: the block carries
    # its own evidence, so whole-block moves keep the decision with the block
    return (np.imag(x[1::sps] * np.conj(x[0::sps])) > 0).astype(np.uint8)[:-1]


def test_segment_count_and_partition_identity():
    bits, buf = packet()
    seg = segment_transitions(buf, bits)
    assert len(seg.segments) == 95
    assert all(s.samples.size == 2 for s in seg.segments)
    assert np.array_equal(seg.concatenate().samples, buf.samples)
    assert [s.class_label for s in seg.segments[:3]] == [(bits[0], bits[1]), (bits[1], bits[2]), (bits[2], bits[3])]


def test_interpolated_segments():
    bits, buf = packet()
    up = interpolate(buf, 64)
    seg = segment_transitions(up, bits, interp_factor=64)
    assert len(seg.segments) == 95 and seg.segments[0].samples.size == 128
    assert seg.tail.size == 128
    assert np.array_equal(seg.concatenate().samples, up.samples)


def test_alternating_bits_have_two_classes():
    bits = np.tile([0, 1], 48)
    seg = segment_transitions(sdpsk_modulate(bits), bits)
    assert set(seg.classes.tolist()) == {1, 2}


def test_segment_errors():
    bits, buf = packet()
    with pytest.raises(SignalLengthError):
        segment_transitions(buf, bits[:-1])
    with pytest.raises(ParameterError):
        segment_transitions(IqBuffer(np.ones(2, complex)), [1])


def test_swap_of_two_same_class_segments():
    bits = np.array([1, 1, 1])
    buf = IqBuffer(np.arange(6) + 0j)
    seg = segment_transitions(buf, bits)
    outs = {tuple(shuffle_transitions(seg, s).samples.real) for s in range(20)}
    assert outs == {(0, 1, 2, 3, 4, 5), (2, 3, 0, 1, 4, 5)}


@given(st.integers(0, 2**32 - 1), st.integers(0, 255), st.integers(0, 255))
def test_class_multisets_and_positions_preserved(seed, sat_id, mfc):
    bits, buf = packet(sat_id, 7, mfc)
    seg = segment_transitions(buf, bits)
    out = shuffle_transitions(seg, seed).samples
    assert out.size == buf.samples.size
    assert np.array_equal(out[-2:], buf.samples[-2:])
    a = class_bags(buf.samples, seg.classes, 2)
    b = class_bags(out, seg.classes, 2)
    assert all(np.array_equal(a[c], b[c]) for c in range(4))
    # every destination block holds a source block of the same class
    src = out[:190].reshape(95, 2)
    orig = buf.samples[:190].reshape(95, 2)
    for j in range(95):
        match = np.flatnonzero(np.all(orig == src[j], axis=1))
        assert any(seg.classes[k] == seg.classes[j] for k in match)


def test_shuffle_determinism_and_inference_identity():
    bits, buf = packet()
    seg = segment_transitions(buf, bits)
    assert np.array_equal(shuffle_transitions(seg, 5).samples, shuffle_transitions(seg, 5).samples)
    assert not np.array_equal(shuffle_transitions(seg, 5).samples, shuffle_transitions(seg, 6).samples)
    assert np.array_equal(shuffle_transitions(seg, 5, training=False).samples, buf.samples)


def test_demodulated_class_counts_preserved():
    rng = np.random.default_rng(2)
    for trial in range(50):
        bits, buf = packet(int(rng.integers(256)), int(rng.integers(256)), trial)
        assert np.array_equal(intra_block_bits(buf.samples), bits[1:])
        out = shuffle_transitions(segment_transitions(buf, bits), trial).samples
        demod = np.concatenate([[bits[0]], intra_block_bits(out)])
        orig = np.bincount(transition_classes(bits), minlength=4)
        assert np.array_equal(np.bincount(transition_classes(demod), minlength=4), orig)


def test_block_permutation_uniform_within_class():
    classes = np.array([[0, 1, 0, 0, 1]])
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(3000):
        p = block_permutation(classes, rng)[0]
        assert np.array_equal(classes[0, p], classes[0])
        counts[tuple(p)] = counts.get(tuple(p), 0) + 1
    # 3! orders of the class-0 blocks times 2! of the class-1 blocks
    assert len(counts) == 12
    freq = np.array(list(counts.values())) / 3000
    assert np.all(np.abs(freq - 1 / 12) < 0.03)


def test_batched_indices_match_single_packet_shuffle():
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, size=(6, 96))
    idx = shuffle_indices(bits, 4, rng)
    assert idx.shape == (6, 384)
    for b in range(6):
        assert np.array_equal(np.sort(idx[b]), np.arange(384))
        cls = transition_classes(bits[b])
        src_blocks = idx[b, : 95 * 4 : 4] // 4
        assert np.array_equal(cls[src_blocks], cls)
        assert np.array_equal(idx[b, -4:], np.arange(380, 384))


def test_shuffling_destroys_linear_sat_id_readout():
    clear = bit_accuracies(False)
    assert clear[7] > 0.95  # the same classifier reads the first sat_id bit from clean waveforms
    shuffled = bit_accuracies(True)
    assert shuffled[7] < 0.7
    assert shuffled.mean() <= 0.5 + 0.05


def test_phase_step_features_still_carry_bits():
    # class positions survive shuffling, so a second-order detector still reads
    # every bit; the shuffle removes cross-block phase context only
    for trial in range(20):
        rng = np.random.default_rng(trial)
        bits, buf = packet(int(rng.integers(256)), 0, 0, ref_phase=float(rng.uniform(0, 6)))
        out = shuffle_transitions(segment_transitions(buf, bits), trial).samples
        assert np.array_equal(intra_block_bits(out), bits[1:])
