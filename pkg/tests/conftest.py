import pytest

from telebtc.bridge_spv import Checkpoint
from telebtc.chainsim import COIN, SimChain, address_of


def extend(chain, n, parent=None, txs=()):
    """Mine ``n`` blocks on ``parent`` (default: tip) at the chain's natural spacing."""
    blocks = []
    parent = parent or chain.tip.hash
    for i in range(n):
        p = chain.blocks[parent]
        blk = chain.mine_block(parent, list(txs) if i == 0 else [],
                               p.header.timestamp + chain.expected_interval(parent))
        blocks.append(blk)
        parent = blk.hash
    return blocks


def checkpoint_of(chain):
    g = chain.genesis
    return Checkpoint.from_header(g.header, 0, g.header.timestamp)


@pytest.fixture
def chain():
    return SimChain([(address_of("alice"), 10 * COIN), (address_of("locker"), 5 * COIN)])


_CRITERIA: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"criterion {self.number} {verdict}: {self.title}" + (f" ({detail})" if detail else "")
        print(line)
        _CRITERIA.append(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
