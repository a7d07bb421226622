"""Shared independent oracles for the test suite."""

from schottkyflow.arith import trace_length


def skew_orbit_oracle(g, mg, T, n_max):
    """Primitive closed geodesics on the level-q cover, counted directly as
    least-period orbits of the skew-product shift (word, coset): rotation
    orbits of pairs are enumerated explicitly, with no lift-rule shortcut.
    """
    count = 0
    seen = set()

    def cyclic_words(n):
        def rec(word):
            if len(word) == n:
                if word[0] != g.sbar(word[-1]):
                    yield word
                return
            nxt = range(g.n_symbols) if not word else g.allowed_after(word[-1])
            for s in nxt:
                yield from rec(word + (s,))

        yield from rec(())

    for n in range(1, n_max + 1):
        for word in cyclic_words(n):
            hol = 0
            for s in word:
                hol = mg.mul_indices(hol, mg.cocycle_images[s])
            if hol != 0:
                continue  # does not close up on the cover
            m = g.word_matrix(word)
            if abs(m.trace) <= 2 or trace_length(m) >= T:
                continue
            for x0 in range(mg.order):
                key0 = (word, x0)
                if key0 in seen:
                    continue
                orbit = []
                w, x = word, x0
                while True:
                    orbit.append((w, x))
                    x = mg.mul_indices(x, mg.cocycle_images[w[0]])
                    w = w[1:] + w[:1]
                    if (w, x) == (word, x0):
                        break
                if len(orbit) == n:  # least period n <=> primitive upstairs
                    count += 1
                seen.update(orbit)
    return count
