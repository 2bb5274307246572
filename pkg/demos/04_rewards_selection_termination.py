"""Rewards, epsilon-greedy sampling, and the termination rule.

Three small experiments:
  1. the sign-of-centered-cosine reward on hand-built distributions,
  2. how often the epsilon-greedy sampler takes the chronological branch,
  3. the run-of-unit-rewards termination counter.
"""

import argparse

import numpy as np

from claimsift.labels import one_hot
from claimsift.reward import centered_cosine, labeled_claim_reward, sign_similarity
from claimsift.selection import GREEDY, PostSampler, TerminationTracker


def reward_gallery():
    print("sign-of-centered-cosine rewards against truth T:")
    target = one_hot("T", "veracity")
    cases = [
        ("confident and correct", np.array([0.02, 0.94, 0.02, 0.02])),
        ("uniform (no information)", np.full(4, 0.25)),
        ("confident but wrong (F)", np.array([0.02, 0.02, 0.94, 0.02])),
        ("leaning correct", np.array([0.15, 0.45, 0.20, 0.20])),
    ]
    for name, dist in cases:
        cosine = centered_cosine(dist, target)
        reward = sign_similarity(dist, target)
        print(f"  {name:<28} cosine={cosine:+.3f} reward={reward:+d}")
    outcome = labeled_claim_reward(np.array([0.02, 0.94, 0.02, 0.02]), "T")
    print(f"  labeled_claim_reward agrees: value={outcome.value:+d} "
          f"branch={outcome.branch}")


def sampler_frequencies(epsilon, draws=20_000):
    greedy = 0
    for i in range(draws):
        sampler = PostSampler(12, epsilon, np.random.default_rng(i))
        sampler.sample()
        if sampler.last_branch == GREEDY:
            greedy += 1
    return greedy / draws


def selection_demo():
    print("\nepsilon-greedy branch frequency over 20k first draws:")
    for epsilon in (0.0, 0.3, 0.7, 1.0):
        frequency = sampler_frequencies(epsilon)
        print(f"  epsilon={epsilon:.1f}: greedy (chronological) branch "
              f"{frequency:.3f} of the time")

    sampler = PostSampler(6, 0.5, np.random.default_rng(42))
    order = [sampler.sample() for _ in range(6)]
    print(f"  one full drain of a 6-post thread (without replacement): {order}")


def termination_demo():
    print("\ntermination after 4 continuous unit rewards:")
    tracker = TerminationTracker(4)
    stream = [1, 1, 1, 0, 1, 1, 1, 1, -1]
    for position, reward in enumerate(stream, start=1):
        fired = tracker.observe(reward)
        note = "  <- fires here and latches" if fired and position == 8 else ""
        print(f"  step {position}: reward={reward:+d} fired={fired}{note}")
    print(f"  still fired after the trailing -1: {tracker.fired}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.parse_args()
    reward_gallery()
    selection_demo()
    termination_demo()


if __name__ == "__main__":
    main()
