import random

import pytest

from dposforensics.model import ActionKind, make_action

T0 = 1_609_459_200  # 2021-01-01T00:00:00Z
DAY = 86_400


class TraceBuilder:
    """Compact trace construction for tests; block/seq auto-increment."""

    def __init__(self, start=T0):
        self.actions = []
        self.t = start

    def _add(self, kind, actor, payload, ts=None):
        if ts is None:
            self.t += 1
            ts = self.t
        else:
            self.t = max(self.t, ts)
        idx = len(self.actions)
        self.actions.append(make_action(kind, actor, ts, idx + 1, idx, payload))
        return self

    def newaccount(self, creator, created, ts=None):
        return self._add(ActionKind.NEW_ACCOUNT, creator,
                         {"created": created, "creator": creator}, ts)

    def delegate(self, actor, amount, ts=None):
        return self._add(ActionKind.DELEGATE_BW, actor, {"amount": amount}, ts)

    def undelegate(self, actor, amount, ts=None):
        return self._add(ActionKind.UNDELEGATE_BW, actor, {"amount": amount}, ts)

    def regproducer(self, actor, ts=None):
        return self._add(ActionKind.REG_PRODUCER, actor, {}, ts)

    def regproxy(self, actor, isproxy=True, ts=None):
        return self._add(ActionKind.REG_PROXY, actor, {"isproxy": isproxy}, ts)

    def vote(self, actor, producers, ts=None):
        return self._add(ActionKind.VOTE_PRODUCER, actor,
                         {"proxy": "", "producers": sorted(producers)}, ts)

    def vote_proxy(self, actor, proxy, ts=None):
        return self._add(ActionKind.VOTE_PRODUCER, actor,
                         {"proxy": proxy, "producers": []}, ts)

    def build(self):
        return list(self.actions)


@pytest.fixture
def tb():
    return TraceBuilder()


def random_trace(seed, n_actions=500, n_accounts=40, n_candidates=8, n_proxies=4):
    """Random action soup: mostly valid operations, some that replay rejects."""
    rng = random.Random(seed)
    b = TraceBuilder()
    accounts = [f"acct{chr(97 + i // 26)}{chr(97 + i % 26)}" for i in range(n_accounts)]
    candidates = accounts[:n_candidates]
    proxies = accounts[n_candidates:n_candidates + n_proxies]
    for name in accounts:
        b.newaccount("genesis", name)
        b.delegate(name, rng.randint(1, 500) * 10_000)
    for name in candidates:
        b.regproducer(name)
    for name in proxies:
        b.regproxy(name)
    voters = accounts[n_candidates:]
    for _ in range(n_actions):
        roll = rng.random()
        actor = rng.choice(voters)
        step = rng.randint(1, DAY)
        b.t += step
        if roll < 0.30:
            k = rng.randint(0, min(5, len(candidates)))
            b.vote(actor, rng.sample(candidates, k))
        elif roll < 0.45:
            b.vote_proxy(actor, rng.choice(proxies))
        elif roll < 0.60:
            b.delegate(actor, rng.randint(1, 100) * 10_000)
        elif roll < 0.72:
            b.undelegate(actor, rng.randint(1, 2000) * 10_000)  # may be rejected
        elif roll < 0.82:
            proxy = rng.choice(proxies)
            b.regproxy(proxy, rng.random() < 0.8)
        elif roll < 0.92:
            b.vote(rng.choice(proxies), rng.sample(candidates, rng.randint(1, 4)))
        else:
            b.vote(actor, [rng.choice(accounts)])  # may hit a non-candidate
    return b.build()
