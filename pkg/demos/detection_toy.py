"""Score person boxes with an untrained detection head and evaluate frame-level mAP.

Shows the plumbing: proposal filtering, RoI features from the dilated res5
feature maps of both pathways, sigmoid class scores, and greedy IoU matching.
The network is untrained, so the resulting mAP is near what random scores give.
"""
import numpy as np

from slowfast.data import batch_inputs, generate_synthetic_corpus, sample_test_views
from slowfast.detect import (Box, DetectionFrame, GroundTruth, Proposal, detection_scores, filter_proposals,
                             frame_map)
from slowfast.net import NetworkInstance
from slowfast.train import desk_config


def main():
    cfg = desk_config().with_changes(head="detect", num_classes=3)
    net = NetworkInstance.create(cfg, seed=0, mode="eval")
    rng = np.random.default_rng(0)
    frames = []
    for k, video in enumerate(generate_synthetic_corpus(0, 4, 2)):
        inp = batch_inputs(sample_test_views(video, cfg, 32, 1, 1), cfg)
        truth = GroundTruth(Box(0.1, 0.1, 0.6, 0.7), frozenset({k % 3}))
        proposals = [Proposal(truth.box, 0.97), Proposal(Box(0.4, 0.3, 0.9, 0.95), 0.93),
                     Proposal(Box(0.0, 0.5, 0.3, 1.0), float(rng.uniform(0.5, 0.95)))]
        kept = [p.box for p in filter_proposals(proposals)]
        frames.append(DetectionFrame(f"clip{k}", kept, detection_scores(net, inp, kept), [truth]))
    rep = frame_map(frames)
    print(rep.to_tsv(), end="")
    print(f"mAP\t{rep.mean_ap:.4f}")


if __name__ == "__main__":
    main()
