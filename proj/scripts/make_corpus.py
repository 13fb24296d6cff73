"""Regenerates data/corpus.txt: a synthetic caption corpus with a Zipfian head and a rare-word tail."""
import random
import sys

SEED = 2024
COMMON = """the a of in on at with and under over near beside small large old new red blue green
yellow white black bright dark soft quiet busy sunny rainy foggy wooden stone metal glass city
street garden field river lake beach forest mountain road bridge window door kitchen room table
chair shelf lamp sky cloud light shadow morning evening night winter summer autumn spring people
child woman man friend family group picture view scene portrait landscape detail color pattern
sits stands walks runs looks rests waits plays shines grows floats""".split()
CONCEPTS = ["cat", "dog", "car", "tree", "house", "boat"]
ONSETS = ["b", "br", "d", "dr", "f", "g", "gl", "k", "kr", "l", "m", "n", "p", "pl", "qu", "r", "s",
          "sk", "sn", "t", "tr", "v", "w", "z", "zh"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "y"]
CODAS = ["", "b", "k", "l", "m", "n", "p", "r", "sk", "t", "x", "z"]


def pseudo_word(rng):
    return "".join(rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(rng.randint(2, 3))) + rng.choice(CODAS)


def main(path):
    rng = random.Random(SEED)
    taken = set(COMMON) | set(CONCEPTS)
    rare = []
    while len(rare) < 240:
        w = pseudo_word(rng)
        if w not in taken:
            taken.add(w)
            rare.append(w)
    # each rare word appears once or twice; common words follow a Zipf law
    rare_slots = [w for w in rare for _ in range(rng.choice([1, 1, 2]))]
    rng.shuffle(rare_slots)
    weights = [1.0 / (r + 1) for r in range(len(COMMON))]
    lines = []
    while rare_slots:
        words = rng.choices(COMMON, weights, k=rng.randint(5, 10))
        words.insert(rng.randrange(len(words) + 1), rng.choice(CONCEPTS))
        if rng.random() < 0.6:
            words.insert(rng.randrange(len(words) + 1), rare_slots.pop())
        lines.append(" ".join(words))
    with open(path, "w") as f:
        f.write("# synthetic captions, generated by scripts/make_corpus.py\n")
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/corpus.txt")
