"""Slow, loop-based reference implementations used as test oracles."""
import math


def dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def neighbours(points, i, exclude_self):
    """Indices of all points ordered by (distance to point i, index)."""
    cand = [j for j in range(len(points)) if not (exclude_self and j == i)]
    return sorted(cand, key=lambda j: (dist(points[i], points[j]), j))


def bandwidth(points, m=25):
    avgs = []
    for i in range(len(points)):
        nb = neighbours(points, i, True)[:m]
        avgs.append(sum(dist(points[i], points[j]) for j in nb) / m)
    avgs.sort()
    n = len(avgs)
    return avgs[n // 2] if n % 2 else 0.5 * (avgs[n // 2 - 1] + avgs[n // 2])


def kernel(a, b, omega):
    d2 = sum((x - y) ** 2 for x, y in zip(a, b))
    return sum(math.exp(-d2 / (2.0 ** (i - 2) * omega**2)) for i in (1, 2, 3))


def mmd(gen, real, omega):
    n, m = len(gen), len(real)
    kxx = sum(kernel(a, b, omega) for a in gen for b in gen) / n**2
    kyy = sum(kernel(a, b, omega) for a in real for b in real) / m**2
    kxy = sum(kernel(a, b, omega) for a in gen for b in real) / (n * m)
    return math.sqrt(max(kxx + kyy - 2 * kxy, 0.0))


def sknn(points, labels, k):
    total = 0.0
    for i in range(len(points)):
        nb = neighbours(points, i, True)[:k]
        total += sum(labels[j] == labels[i] for j in nb) / k
    return total / len(points)


def pknn(real, real_labels, gen, gen_labels, k):
    hits = 0
    for q, truth in zip(gen, gen_labels):
        order = sorted(range(len(real)), key=lambda j: (dist(q, real[j]), j))[:k]
        votes = {}
        for j in order:
            c, s = votes.get(real_labels[j], (0, 0.0))
            votes[real_labels[j]] = (c + 1, s + dist(q, real[j]))
        best = min(votes, key=lambda lab: (-votes[lab][0], votes[lab][1], lab))
        hits += best == truth
    return hits / len(gen)
