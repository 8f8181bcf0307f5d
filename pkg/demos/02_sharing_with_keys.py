from ddash.errors import NotARecipientError
from ddash.identity import decrypt, encrypt_for, generate_encryption_key, generate_identity, sign, verify_sig

alice, bob, carol = (generate_encryption_key() for _ in range(3))
print("alice", alice.fingerprint.short_id)
print("bob  ", bob.fingerprint.short_id)
print("carol", carol.fingerprint.short_id)

# One container, readable by alice and bob
secret = b"subject,arm,outcome\n1,a,0.41\n"
box = encrypt_for(secret, [alice.public(), bob.public()])
raw = box.serialize()
print("container bytes:", len(raw), "for", len(box.slots), "recipients")
print("bob reads:", decrypt(raw, bob) == secret)

try:
    decrypt(raw, carol)
except NotARecipientError as exc:
    print("carol:", exc)

# Signing is separate from encryption: accounts sign ledger records
account = generate_identity()
sig = sign(b"record bytes", account)
print("signature valid:", verify_sig(b"record bytes", sig, account.signing_public))
print("other message:  ", verify_sig(b"record bytez", sig, account.signing_public))
