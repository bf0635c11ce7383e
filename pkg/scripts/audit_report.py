#!/usr/bin/env python3
"""Print token-budget and FLOPs reports for the toy and full-scale
presets, plus the fusion-weight schedule at full encoder depth."""

import json

from sparsevla.audit import audit_budget, audit_flops, resolve_preset
from sparsevla.fuser import AlphaSchedule, alpha


def main() -> int:
    for preset in ("toy", "paper-dims"):
        a = resolve_preset(preset)
        print(f"== {preset} ==")
        print(json.dumps(audit_budget(a), indent=2, sort_keys=True))
        print(json.dumps(audit_flops(a), indent=2, sort_keys=True))
    sched = AlphaSchedule(psi=0.2, delta=0.05, l_max=24)
    print("== fusion weight schedule (24 layers) ==")
    for l in range(0, 25, 4):
        print(f"  layer {l:2d}: alpha = {alpha(l, sched):.6f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
