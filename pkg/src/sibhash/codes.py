"""Binary code algebra: sign encoding, bit packing, Hamming distances.

Codes are matrices with entries in {-1, +1}. For fast retrieval they are
sign-packed into 64-bit words (bit 1 encodes +1, bit 0 encodes -1; bit j of
word w covers code bit 64*w + j, unused high bits are zero), so a Hamming
distance is one XOR plus a popcount. The identity ``2 * d_H = c - <b_i, b_j>``
links Hamming distances back to code inner products.
"""

import numpy as np

WORD_BITS = 64

_SHIFTS = np.arange(WORD_BITS, dtype=np.uint64)


def sign_encode(features, projection):
    """Encode feature rows into {-1,+1} codes via sgn(projection @ x).

    Parameters
    ----------
    features : ndarray, shape (n, d)
    projection : ndarray, shape (c, d)
        One row per code bit.

    Returns
    -------
    ndarray, shape (n, c), dtype int8, entries in {-1, +1}

    Zero projections map to +1 so encoding is deterministic.
    """
    features = np.asarray(features, dtype=np.float64)
    projection = np.asarray(projection, dtype=np.float64)
    if features.ndim != 2 or projection.ndim != 2:
        raise ValueError("features and projection must be 2-D")
    if features.shape[1] != projection.shape[1]:
        raise ValueError(
            f"feature dim {features.shape[1]} does not match "
            f"projection dim {projection.shape[1]}"
        )
    raw = features @ projection.T
    return np.where(raw >= 0.0, 1, -1).astype(np.int8)


def _validate_codes(codes):
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError("codes must be a 2-D matrix")
    if not np.isin(codes, (-1, 1)).all():
        raise ValueError("code entries must be exactly -1 or +1")
    return codes.astype(np.int8, copy=False)


class PackedCodes:
    """N codes of ``code_len`` bits, sign-packed into uint64 words.

    Immutable after construction; safe for concurrent reads.
    """

    __slots__ = ("words", "n_items", "code_len", "n_words")

    def __init__(self, words, code_len):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 2:
            raise ValueError("words must be a 2-D array")
        if code_len < 1:
            raise ValueError("code_len must be >= 1")
        n_words = (code_len + WORD_BITS - 1) // WORD_BITS
        if words.shape[1] != n_words:
            raise ValueError(
                f"expected {n_words} words for code_len={code_len}, "
                f"got {words.shape[1]}"
            )
        tail = code_len % WORD_BITS
        if tail and words.shape[0] and (words[:, -1] >> np.uint64(tail)).any():
            raise ValueError("unused high bits of the last word must be zero")
        self.words = words
        self.n_items = words.shape[0]
        self.code_len = code_len
        self.n_words = n_words

    def __len__(self):
        return self.n_items

    def row(self, i):
        """Packed words of item i (1-D uint64 view)."""
        return self.words[i]

    def unpack(self):
        """Expand back to an (n, code_len) int8 matrix in {-1, +1}."""
        bits = (self.words[:, :, None] >> _SHIFTS) & np.uint64(1)
        bits = bits.reshape(self.n_items, self.n_words * WORD_BITS)
        return (bits[:, : self.code_len].astype(np.int8) * 2 - 1)

    def distances_to(self, query_words):
        """Hamming distances from one packed query row to every item."""
        query_words = np.asarray(query_words, dtype=np.uint64)
        if query_words.shape != (self.n_words,):
            raise ValueError(
                f"query has {query_words.shape[-1]} words, index rows have "
                f"{self.n_words}"
            )
        return np.bitwise_count(self.words ^ query_words).sum(
            axis=1, dtype=np.int64
        )

    def __eq__(self, other):
        return (
            isinstance(other, PackedCodes)
            and self.code_len == other.code_len
            and np.array_equal(self.words, other.words)
        )

    def __repr__(self):
        return f"PackedCodes(n_items={self.n_items}, code_len={self.code_len})"


def pack_codes(codes):
    """Pack a {-1,+1} code matrix into :class:`PackedCodes`.

    Bit layout is little-endian within each 64-bit word, so serialized codes
    are bit-exact across platforms.
    """
    codes = _validate_codes(codes)
    n, c = codes.shape
    n_words = (c + WORD_BITS - 1) // WORD_BITS
    bits = np.zeros((n, n_words * WORD_BITS), dtype=np.uint64)
    bits[:, :c] = codes > 0
    words = np.bitwise_or.reduce(
        bits.reshape(n, n_words, WORD_BITS) << _SHIFTS, axis=2
    )
    return PackedCodes(words, c)


def hamming_distance(a, b):
    """Hamming distance between two packed code rows.

    Symmetric, zero on identical rows, at most the code length. Raises if the
    rows have different word counts.
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"code length mismatch: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def inner_product_from_hamming(d_h, code_len):
    """Recover the code inner product from a Hamming distance.

    Uses ``2 * d_H = c - <b_i, b_j>``, exact for {-1,+1} codes.
    """
    if not 0 <= d_h <= code_len:
        raise ValueError(f"d_h={d_h} outside [0, {code_len}]")
    return code_len - 2 * d_h
