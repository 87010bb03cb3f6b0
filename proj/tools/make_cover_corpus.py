#!/usr/bin/env python3
"""Writes the synthetic cover corpus shipped in data/.

Every sentence follows one template,

    det adj noun verb det adj noun [prep det adj noun] punct

where the subject, object and prepositional noun phrases use disjoint
adjective and noun lists, so every order-2 context predicts one word class.
Each slot draws from a word list whose first two entries carry most of
the mass (--head) while the rest form a long Zipf tail. A language model
trained on it therefore has peaked next-word distributions: the top two
candidates are the natural choices and deep-rank candidates are rare.
"""
import argparse
import random

SYL = ["ka", "lo", "mi", "ren", "to", "sa", "vel", "dor", "an", "bri", "cu", "fen",
       "gal", "hu", "is", "jo", "mar", "nel", "or", "pi", "qua", "ros", "tur", "ul"]


def words(rng, n, suffix, taken):
    out = []
    while len(out) < n:
        w = "".join(rng.choice(SYL) for _ in range(rng.randint(1, 3))) + suffix
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def picker(rng, items, head, zipf):
    tail = [1.0 / (i + 1) ** zipf for i in range(len(items) - 2)]
    scale = (1.0 - head) / sum(tail)
    weights = [head * 0.55, head * 0.45] + [w * scale for w in tail]
    return lambda: rng.choices(items, weights)[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sentences", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=2019)
    ap.add_argument("--head", type=float, default=0.95)
    ap.add_argument("--zipf", type=float, default=0.8)
    ap.add_argument("--pp", type=float, default=1.0, help="probability of the trailing prepositional phrase")
    ap.add_argument("--out", default="data/cover_sample.txt")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    taken = {"the", "a"}

    def slot(n, suffix, lead=()):
        items = list(lead) + words(rng, n - len(lead), suffix, taken)
        return picker(rng, items, args.head, args.zipf)

    det = slot(40, "e", ["the", "a"])
    roles = [(slot(80, "ish"), slot(100, "")) for _ in range(3)]
    verb = slot(100, "s")
    prep = slot(40, "at", ["in", "on"])
    punct = picker(rng, [".", "!", "?"], 0.98, 1.0)

    def np_(role):
        adj, noun = roles[role]
        return [det(), adj(), noun()]

    with open(args.out, "w", encoding="utf-8") as f:
        for _ in range(args.sentences):
            s = np_(0) + [verb()] + np_(1)
            if rng.random() < args.pp:
                s += [prep()] + np_(2)
            f.write(" ".join(s + [punct()]) + "\n")


if __name__ == "__main__":
    main()
