import time

from ddash.content_store import ContentId
from ddash.identity import generate_identity
from ddash.ledger import Chain, GenesisConfig, MiningStats, make_record, mine_block
from ddash.ledger.chain import REORG

genesis = GenesisConfig(network_id=4828, difficulty=10_000, timestamp=int(time.time()) - 60, comment="demo")
print("genesis hash:", genesis.hash.hex()[:16])

chain = Chain(genesis)
owner = generate_identity()
stats = MiningStats()

# a record binds a content id to its owner and readers
record = make_record(ContentId.for_bytes(b"trial.csv"), owner, None, "public trial data")
chain.add_tx(record)

for i in range(5):
    block = mine_block(chain.head_header, chain.mining_candidates(), owner.fingerprint, stats=stats)
    ev = chain.accept_block(block)
    print(f"block {block.header.height}: {ev.kind}, nonce {block.header.nonce}")

print("mean trials per block:", stats.trials / 5, "(difficulty", genesis.difficulty, ")")
print("checkout:", [r.description for r in chain.checkout(record.content_id)])

# a heavier side branch from genesis takes over
side = genesis.block()
events = []
for i in range(6):
    side = mine_block(side.header, [], owner.fingerprint, start_nonce=10**9)
    events.append(chain.accept_block(side))
print("side branch reorgs:", [(e.kind, e.depth) for e in events if e.kind == REORG])
print("record back in mempool:", len(chain.mempool))
