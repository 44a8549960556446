"""Train SlowFast and Slow-only side by side on the synthetic motion corpus.

Usage: python demos/motion_curves.py [iterations] [log_dir]

Writes one JSON-lines log per run (iteration, learning rate, loss, train and
validation top-1) so the error curves can be plotted. The full 2,000-iteration
budget takes roughly 12 minutes on one CPU core.
"""
import os
import sys

from slowfast.train import motion_experiment


def main():
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 300
    log_dir = sys.argv[2] if len(sys.argv) > 2 else "motion_logs"
    os.makedirs(log_dir, exist_ok=True)

    def show(name, rec):
        if rec["iter"] % 50 == 0 or "val_top1" in rec:
            print(f"{name:<20} iter {rec['iter']:5d}  loss {rec['loss']:.4f}  train {rec['train_top1']:5.1f}")

    res = motion_experiment(seed=0, iters=iters, log_dir=log_dir, on_log=show)
    for name, acc in res.items():
        print(f"{name:<20} val top-1 {acc:.1f}")


if __name__ == "__main__":
    main()
