"""Annotate a thread with the scripted oracle and inspect the prompts.

The oracle answers the same single-line prompts an HTTP completion
backend would see, emits a short reason with every label, and returns a
full probability distribution over the four labels of each task.
"""

import argparse

import numpy as np

from claimsift.annotators import OracleAnnotator, annotate_claim, annotate_post
from claimsift.corpus import SynthConfig, generate_synthetic
from claimsift.labels import STANCE_NAMES, VERACITY_NAMES
from claimsift.prompts import build_stance_prompt, build_veracity_prompt


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--accuracy", type=float, default=0.9)
    args = parser.parse_args()

    dataset = generate_synthetic(SynthConfig(
        n_claims=3, posts_per_claim=5, noise_post_fraction=0.2,
        rng_seed=args.seed,
    ))
    claim = dataset.claims[0]
    sd = OracleAnnotator(accuracy=args.accuracy,
                         rng=np.random.default_rng(args.seed))
    rv = OracleAnnotator(accuracy=args.accuracy,
                         rng=np.random.default_rng(args.seed + 1))

    print(f"claim: {claim.text}\n")
    print("stance prompt for the first post:")
    print("  " + build_stance_prompt(claim, claim.posts[0]))
    print()

    annotations = []
    for post in claim.posts:
        annotation = annotate_post(sd, claim, post)
        annotations.append((post, annotation))
        dist = ", ".join(f"{p:.3f}" for p in annotation.distribution)
        print(f"post {post.post_id}: stance={STANCE_NAMES[annotation.label]:<8} "
              f"[{dist}]")
        print(f"  reason: {annotation.explanation}")

    print("\nveracity prompt over the retained posts:")
    print("  " + build_veracity_prompt(
        claim, [(p, a.label) for p, a in annotations]
    ))

    verdict = annotate_claim(rv, claim, annotations)
    dist = ", ".join(f"{p:.3f}" for p in verdict.distribution)
    print(f"\nverdict: {VERACITY_NAMES[verdict.label]} [{dist}]")
    print(f"  reason: {verdict.explanation}")
    print(f"  gold veracity: {VERACITY_NAMES[claim.veracity]}")


if __name__ == "__main__":
    main()
