import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chaoskpa import ParameterError, UsageError
from chaoskpa.chaos_core import DEFAULT_LOGISTIC, DEFAULT_SINE, keystream, sine
from chaoskpa.cipher import (CipherKey, ImageBytes, Scheme, correlation_audit, decrypt, decrypt_array,
                             encrypt, encrypt_array, hybrid_key, key_mask, single_logistic_key)
from chaoskpa.metrics import pearson_rows

GRAY = single_logistic_key()
RGB = hybrid_key()


def test_zero_image_reveals_keystream():
    z = ImageBytes(2, 2, 1, bytes(4))
    assert encrypt(GRAY, z).data == keystream(DEFAULT_LOGISTIC, 4).data


def test_golden_ciphertext():
    # keystream bytes [133, 84, 199, 165] from the oracle, XORed by hand
    plain = ImageBytes(2, 2, 1, bytes([10, 20, 30, 40]))
    assert list(encrypt(GRAY, plain).data) == [143, 64, 217, 141]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 3]), st.integers(1, 12), st.integers(1, 12), st.data())
def test_round_trip(channels, h, w, data):
    key = GRAY if channels == 1 else RGB
    pix = data.draw(arrays(np.uint8, (channels, h, w)))
    p = ImageBytes.from_array(pix)
    c = encrypt(key, p)
    assert (c.width, c.height, c.channels) == (w, h, channels)
    assert decrypt(key, c) == p


def test_same_key_same_ciphertext():
    img = np.random.default_rng(1).integers(0, 256, (3, 32, 32), dtype=np.uint8)
    assert np.array_equal(encrypt_array(RGB, img), encrypt_array(RGB, img))


def test_channel_mismatch():
    with pytest.raises(UsageError):
        encrypt(GRAY, ImageBytes(2, 2, 3, bytes(12)))
    with pytest.raises(UsageError):
        decrypt(RGB, ImageBytes(2, 2, 1, bytes(4)))


def test_key_validation():
    with pytest.raises(ParameterError):
        CipherKey(Scheme.HYBRID_RGB, DEFAULT_LOGISTIC)
    with pytest.raises(ParameterError):
        CipherKey(Scheme.SINGLE_LOGISTIC, DEFAULT_SINE)


def test_imagebytes_length_invariant():
    with pytest.raises(UsageError):
        ImageBytes(2, 2, 1, bytes(3))


def test_hybrid_independence():
    img = np.random.default_rng(2).integers(0, 256, (3, 16, 16), dtype=np.uint8)
    other = hybrid_key(sine=sine(0.97, 0.154))
    a, b = encrypt_array(RGB, img), encrypt_array(other, img)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[2], b[2])
    assert not np.array_equal(a[1], b[1])


def test_hybrid_channels_use_their_own_maps():
    m = key_mask(RGB, 4, 4)
    assert m[1].tobytes() == keystream(DEFAULT_SINE, 16).data
    assert not np.array_equal(m[0], m[1])


def test_wrong_key_decryption_is_uncorrelated(mnist_images):
    ims = mnist_images[:200]
    wrong = single_logistic_key(DEFAULT_LOGISTIC.with_seed(0.1 + 1e-10))
    rec = decrypt_array(wrong, encrypt_array(GRAY, ims))
    assert abs(np.nanmean(pearson_rows(rec, ims))) < 0.2


class TestAudit:
    def test_mnist_ciphertexts_are_opaque(self, mnist_images):
        rec = correlation_audit(GRAY, mnist_images[:1000])
        assert rec.count == 1000 and rec.skipped == 0
        assert rec.mean_abs_corr < 0.1

    def test_identity_cipher_hook(self, mnist_images):
        rec = correlation_audit(GRAY, mnist_images[:5], encrypt_fn=lambda k, x: x.copy())
        assert rec.mean_abs_corr == pytest.approx(1.0) and rec.max_abs_corr == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(UsageError):
            correlation_audit(GRAY, [])

    def test_constant_plaintext_skipped(self):
        ims = np.random.default_rng(0).integers(0, 256, (4, 1, 8, 8), dtype=np.uint8)
        ims[2] = 7
        rec = correlation_audit(GRAY, ims)
        assert rec.count == 3 and rec.skipped == 1

    def test_accepts_imagebytes(self):
        ims = [ImageBytes.from_array(np.arange(16, dtype=np.uint8).reshape(4, 4))] * 2
        assert correlation_audit(GRAY, ims).count == 2
