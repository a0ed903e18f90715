import pytest

from coinai.chain import Block, Chain, ChainParams, Transaction, append_block
from coinai.datasets import Problem, bundled_dataset
from coinai.grammar import bundled_grammar
from coinai.hashing import sha3_512


def build_chain(n_blocks: int = 10, txs_per_block: int = 2, seed: int = 0) -> Chain:
    """A valid chain with a few transfers between three funded accounts."""
    chain = Chain({"alice": 1000, "bob": 1000, "carol": 1000}, ChainParams(16, 50))
    names = ["alice", "bob", "carol"]
    seq = 0
    for h in range(1, n_blocks + 1):
        txs = []
        for j in range(txs_per_block):
            seq += 1
            txs.append(Transaction(names[seq % 3], names[(seq + 1) % 3], 1 + seq % 7, seq % 4, h, seq))
        block = Block(
            height=h,
            prev_hash=chain.tip_hash,
            transactions=tuple(txs),
            nonce=seed * 1000 + h,
            miner=f"m{h % 2}",
            model_digest=sha3_512(f"model {h}".encode()),
            reported_score=0.9,
            problem_id="two_spirals",
            timestamp=10 * h,
        )
        append_block(chain, block)
    return chain


@pytest.fixture(scope="session")
def grammar():
    return bundled_grammar()


@pytest.fixture(scope="session")
def spirals():
    return Problem("two_spirals", bundled_dataset("two_spirals"))


@pytest.fixture(scope="session")
def stripes():
    return Problem("stripes", bundled_dataset("stripes"))


# One line per acceptance criterion, echoed again in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
