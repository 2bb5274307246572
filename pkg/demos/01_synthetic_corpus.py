"""Generate a synthetic rumor corpus and look around inside it.

Claims carry a [truth:x] marker and each stance-bearing post carries a
[sig:x] marker, so oracle annotators can behave like imperfect but
truth-aware labelers. Noise posts carry [sig:none] and no gold stance.
"""

import argparse
import json

from claimsift.corpus import SynthConfig, generate_synthetic, save_dataset, split_seeds


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", help="optional path to save the corpus as JSONL")
    args = parser.parse_args()

    config = SynthConfig(
        n_claims=12, posts_per_claim=8, noise_post_fraction=0.25,
        rng_seed=args.seed, name="tour",
    )
    dataset = generate_synthetic(config)
    print("corpus stats:")
    print(json.dumps(dataset.stats(), indent=2))

    claim = dataset.claims[0]
    print(f"\nclaim {claim.claim_id} (veracity={claim.veracity}):")
    print(f"  {claim.text}")
    print("thread, in timestamp order:")
    for post in claim.posts:
        marker = post.stance if post.stance is not None else "noise"
        print(f"  [{marker:>5}] t={post.timestamp:<4} {post.author}: {post.text}")

    seeds, pool = split_seeds(dataset, fraction=0.5, rng=args.seed)
    print(f"\nseed split at 0.5: {len(seeds)} of {len(dataset)} claims keep "
          "their veracity labels during training")
    print(f"seed ids: {sorted(seeds)}")
    print(f"pool ids (labels masked): {sorted(pool)}")

    if args.out:
        save_dataset(dataset, args.out)
        print(f"\nsaved to {args.out}")


if __name__ == "__main__":
    main()
