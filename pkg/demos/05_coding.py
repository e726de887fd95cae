"""Random linear coding over GF(256).

A 15 kB block is cut into 10 chunks. The sender emits random combinations,
each travels through the wire format, and the receiver decodes as soon as
it holds 10 independent ones. Ten random combinations are independent with
probability just above 0.996.
"""

import numpy as np

from d2dstream.rlc import (
    CodedChunk,
    DecoderState,
    decode_block,
    encode_chunk,
    full_rank_probability,
    full_rank_trials,
    split_block,
)

rng = np.random.default_rng(5)
data = rng.integers(0, 256, size=15_000, dtype=np.uint8).tobytes()
src = split_block(data, 10)
dec = DecoderState(10, block_id=42)
sent = 0
while not dec.ready:
    wire = encode_chunk(src, rng=rng, block_id=42).to_bytes()
    dec.absorb(CodedChunk.from_bytes(wire, 10))
    sent += 1
print(f"decoded after {sent} coded chunks of {len(wire)} bytes each")
print("byte-exact:", decode_block(dec).tobytes()[: len(data)] == data)
trials = 50_000
print(f"full-rank rate {full_rank_trials(10, trials, rng) / trials:.5f}, "
      f"analytic {full_rank_probability(10):.5f}")
