"""Refine the lattice and the partition together and watch the guaranteed outcome approach the value."""

from mftg.verify import value_study

target, rows = value_study(levels=[(1 / 8, 0.1), (1 / 16, 0.05), (1 / 32, 0.025)], particles=256)
print(f"single-agent reference value: {target:.4f}")
print(f"{'h':>8s} {'spacing':>8s} {'epsilon':>8s} {'estimate':>9s} {'error':>7s}  strongest")
for r in rows:
    print(f"{r['h']:8.4f} {r['spacing']:8.3f} {r['epsilon']:8.4f} {r['estimate']:9.4f} {r['error']:7.4f}  {r['strongest']}")
