"""Budget policies side by side: what each one keeps, and what it costs.

Builds one layer's plans under every policy at a 40% budget and prints the
retained-set structure per head plus the memory accounting. Also shows the
middle-activation arithmetic at the reference operating point.
"""

import numpy as np

from semkv import (
    HeadClass,
    PolicyKind,
    SyntheticProfile,
    apply_policy,
    build_compressed_cache,
    clustered_planted_heads,
    gen_synthetic_trace,
    memory_footprint,
    middle_activation_count,
)

print("middle activations at the reference point "
      "(B=floor(0.4*4096*32), N=4096, f_r=8, n=32, s1=16, s2=256):")
res = middle_activation_count(52428, 4096, 8, 32, 16, 256)
print(f"  k = {res.k} per non-heterogeneous head (clamped: {res.clamped})\n")

shape = (1, 8, 256, 16)
profile = SyntheticProfile("clustered-heads", seed=23, planted=2)
trace = gen_synthetic_trace(profile, shape)
planted = set(clustered_planted_heads(profile, 1, 8)[0])
classes = [
    HeadClass.HETEROGENEOUS if h in planted else HeadClass.NON_HETEROGENEOUS
    for h in range(8)
]
heads = trace.layer_heads(0)
sinks, recents, window, kernel = 4, 16, 16, 7
budget = int(np.floor(0.4 * 256 * 8))
print(f"one layer, n=8, N=256, planted heads {sorted(planted)} heterogeneous, "
      f"budget 40% -> B={budget}\n")


def describe(idx, groups=None):
    parts = []
    runs = np.split(idx, np.where(np.diff(idx) != 1)[0] + 1)
    for run in runs[:4]:
        parts.append(f"{run[0]}..{run[-1]}" if len(run) > 1 else f"{run[0]}")
    text = ", ".join(parts) + (", ..." if len(runs) > 4 else "")
    if groups:
        text += f" + {len(groups)} synthetic group means"
    return f"{len(idx):>3} tokens: [{text}]"


for policy in PolicyKind:
    plan = apply_policy(
        0, heads, classes, policy, 0.4, sinks, recents, window, kernel
    )
    cache = build_compressed_cache(trace, [plan])
    mem = memory_footprint(cache)
    print(f"== {policy.value} (retained {mem.tokens_retained} tokens, "
          f"{mem.bytes} bytes, {mem.ratio_vs_full:.1%} of full)")
    for h in (sorted(planted)[0], [h for h in range(8) if h not in planted][0]):
        kind = "het" if classes[h] == HeadClass.HETEROGENEOUS else "non"
        groups = plan.per_head_groups[h] if plan.per_head_groups else None
        print(f"   head {h} ({kind}): {describe(plan.per_head_retained[h], groups)}")
    print()
