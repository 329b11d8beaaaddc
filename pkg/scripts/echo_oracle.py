#!/usr/bin/env python3
"""Stub victim for protocol tests: answers every request with a fixed string.

Speaks the newline-delimited JSON oracle protocol on stdin/stdout.
Options make it misbehave on purpose so client error paths can be tested.
"""

import argparse
import json
import sys


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--latex", default="x+1", help="fixed transcription to return")
    ap.add_argument("--no-handshake", action="store_true")
    ap.add_argument("--wrong-id", action="store_true")
    ap.add_argument("--die-after", type=int, default=0,
                    help="exit abruptly after N responses")
    args = ap.parse_args()

    if not args.no_handshake:
        print(json.dumps({"ready": True}), flush=True)

    answered = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            rid = req["id"]
        except (json.JSONDecodeError, KeyError):
            print(json.dumps({"id": -1, "error": "malformed request"}), flush=True)
            continue
        if args.wrong_id:
            rid = rid + 1
        print(json.dumps({"id": rid, "latex": args.latex}), flush=True)
        answered += 1
        if args.die_after and answered >= args.die_after:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
