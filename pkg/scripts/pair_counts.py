"""Print pair counts and peak resident pairs for the pair-selection strategies."""

import argparse

from videoalign.viewgraph import Strategy, enumerate_pairs, keyframe_partition


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--stride", type=int, default=2)
    ap.add_argument("--strided-window", type=int, default=5)
    ap.add_argument("--clip-length", type=int, default=10)
    args = ap.parse_args()

    n = args.frames
    rows = [
        (f"symmetric window {args.window}", Strategy.symmetric_window(args.window)),
        (f"stride {args.stride}, window {args.strided_window}", Strategy.strided_window(args.stride, args.strided_window)),
        (f"hierarchical, clip {args.clip_length}", Strategy.hierarchical(args.clip_length)),
    ]
    for name, strategy in rows:
        print(f"{name:32s} {len(enumerate_pairs(n, strategy).edges):5d} pairs")
    part = keyframe_partition(n, args.clip_length)
    sizes = [len(c) * (len(c) - 1) // 2 for c in part.clips]
    print(f"keyframes {list(part.keyframes)}")
    print(f"keyframe stage {len(part.keyframes) * (len(part.keyframes) - 1) // 2} pairs, clip stages {sizes}")


if __name__ == "__main__":
    main()
