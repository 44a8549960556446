"""Print GFLOPs and parameter counts for the lateral, channel-ratio and Fast-input ablations at 256^2."""
from fractions import Fraction

from slowfast.arch import ArchConfig, build_graph, count_flops

BASE = ArchConfig()

GROUPS = {
    "lateral connections": [
        ("Slow-only", dict(mode="slow-only", lateral="none")),
        ("Fast-only", dict(mode="fast-only", lateral="none")),
        ("no lateral", dict(lateral="none")),
        ("TtoC, sum", dict(lateral="time-to-channel", fusion="sum")),
        ("TtoC, concat", dict(lateral="time-to-channel")),
        ("T-sample", dict(lateral="time-strided-sample")),
        ("T-conv", dict()),
    ],
    "channel ratio": [(f"phi=1/{d}", dict(phi=Fraction(1, d))) for d in (4, 6, 8, 12, 16, 32)],
    "Fast pathway input": [
        ("RGB", dict()),
        ("gray", dict(input_variant="gray")),
        ("time diff", dict(input_variant="time-diff")),
        ("half res, phi=1/4", dict(input_variant="half-res", phi=Fraction(1, 4))),
    ],
}


def main():
    for title, rows in GROUPS.items():
        print(f"# {title}")
        for name, changes in rows:
            cfg = BASE.with_changes(**changes)
            rep = count_flops(build_graph(cfg), (cfg.raw_frames, 256))
            print(f"{name:<20} {rep.gflops:7.2f} GFLOPs  {rep.total_params / 1e6:7.2f}M params")
        print()


if __name__ == "__main__":
    main()
