#!/usr/bin/env python3
"""Walk through the four token-routing strategies.

Run: python3 demos/01_routing_walkthrough.py
"""

import math

from flowhn.routing import SplitMode, format_plan, plan

L = 6

print("=== NoSplit: every token goes to both branches ===")
for i in range(2):
    print(format_plan(plan(SplitMode.NO_SPLIT, L, i)))

print("\n=== AESplit: contiguous halves, swapped every block ===")
for i in range(4):
    print(format_plan(plan(SplitMode.AE_SPLIT, L, i)))

print("\n=== FASplit: static FLOP-balanced window ===")
# with attention twice as expensive per token as the SSM, the SSM should
# take 2/3 of the tokens: block_size = round(6 * 2/3) = 4
for i in range(3):
    print(format_plan(plan(SplitMode.FA_SPLIT, L, i, 4)))

print("\n=== FACSplit: the same window circulates across blocks ===")
# offset advances by block_size each block, modulo L, so the SSM window
# sweeps the whole sequence and every token periodically gets the
# attention treatment too
for i in range(5):
    print(format_plan(plan(SplitMode.FAC_SPLIT, L, i, 4)))

print("\n=== coverage of the circulating window ===")
bs = 4
ssm_span = math.ceil(L / bs) + 1
attn_span = L // math.gcd(L, bs)
ssm_seen, attn_seen = set(), set()
for i in range(ssm_span):
    ssm_seen |= set(plan(SplitMode.FAC_SPLIT, L, i, bs).ssm_indices)
for i in range(attn_span):
    attn_seen |= set(plan(SplitMode.FAC_SPLIT, L, i, bs).attn_indices)
print(f"every position reaches the SSM within {ssm_span} blocks: "
      f"{ssm_seen == set(range(L))}")
print(f"every position reaches attention within {attn_span} blocks: "
      f"{attn_seen == set(range(L))}")
