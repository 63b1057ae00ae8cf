"""Collects one verdict per acceptance criterion for the terminal summary."""
RESULTS = {}


def record(num, title, status, detail):
    RESULTS[str(num)] = (title, status, detail)


def lines():
    def order(k):
        return (int("".join(c for c in k if c.isdigit())), k)
    return [f"[{RESULTS[k][1]:<7}] {k:<3} {RESULTS[k][0]}: {RESULTS[k][2]}" for k in sorted(RESULTS, key=order)]
