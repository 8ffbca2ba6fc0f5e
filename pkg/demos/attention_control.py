"""One self-attention layer under the two attention controls.

Cross-frame sharing makes every frame read keys and values from frame 0,
which pulls the frames' outputs towards each other. Query injection swaps
in queries from another pass; injecting a layer's own queries changes nothing.

    python3 demos/attention_control.py
"""

import numpy as np

from unictrl.attention import AttentionWeights, ControlHook, self_attention_block
from unictrl.tensor import Tensor, parameter

rng = np.random.default_rng(0)
d, heads, frames, tokens = 16, 2, 4, 9


def proj():
    return parameter(rng.normal(size=(d, d)) / np.sqrt(d))


w = AttentionWeights(proj(), proj(), proj(), proj(), heads)

# frames share a common layout plus per-frame jitter, like neighbouring video frames
layout = rng.normal(size=(tokens, d))
z = Tensor((layout + 0.6 * rng.normal(size=(frames, tokens, d))).astype(np.float32))


def spread(out):
    """Mean distance of each frame's output from the frame average."""
    return float(np.linalg.norm(out - out.mean(axis=0), axis=(1, 2)).mean())


records = []
vanilla = self_attention_block(z, w, ControlHook.vanilla(), records.append).data
shared = self_attention_block(z, w, ControlHook.sac()).data
value_only = self_attention_block(z, w, ControlHook.sac_value_only()).data

print("frame spread of the layer output")
print(f"  own keys/values       {spread(vanilla):.4f}")
print(f"  frame-0 keys/values   {spread(shared):.4f}")
print(f"  frame-0 values only   {spread(value_only):.4f}")
print(f"frame 0 unchanged by sharing: {np.array_equal(vanilla[0], shared[0])}")

own_q = records[0].q
again = self_attention_block(z, w, ControlHook.q_inject(own_q)).data
print(f"injecting the layer's own queries is a no-op: {np.array_equal(again, vanilla)}")

other = Tensor((layout + 0.6 * rng.normal(size=(frames, tokens, d))).astype(np.float32))
foreign = []
self_attention_block(other, w, ControlHook.vanilla(), foreign.append)
moved = self_attention_block(z, w, ControlHook.sac_q_inject(foreign[0].q)).data
print(f"queries from another clip plus sharing, spread {spread(moved):.4f}")
